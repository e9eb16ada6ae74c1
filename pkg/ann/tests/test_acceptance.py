"""
End-to-end checks on synthetic data.

The 100K clustered runs take minutes; they are tagged ``slow`` and can be
skipped with ``manage.py test --exclude-tag slow``.
"""

import logging
import time

import numpy as np
from django.test import SimpleTestCase, tag

from ann.services.bench_harness import ground_truth, measure, preset, recall_at_k
from ann.services.distance_kernels import KernelTier, host_tiers, kernels_for_tier
from ann.services.hnsw_graph import BuildConfig, GraphIndex, GraphMode, build
from ann.services.search_pipeline import SearchConfig, search, search_batch
from ann.services.vector_store import Dataset, gen_clustered, gen_queries, split_holdout

logger = logging.getLogger(__name__)


class OracleTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        rng = np.random.default_rng(2024)
        cls.dataset = Dataset(rng.standard_normal((2000, 32)).astype(np.float32))
        cls.queries = rng.standard_normal((100, 32)).astype(np.float32)
        cls.index = build(cls.dataset, BuildConfig(m0=16, ef0=100))
        cls.truth = ground_truth(cls.dataset, cls.queries, 10)

    def test_exhaustive_search_is_exact(self):
        n = self.dataset.n
        config = SearchConfig(k=10, n_coarse=n, m_ef=1, ef_search=n, n_rerank=n, early_termination=False)
        results = [search(self.index, q, config) for q in self.queries]
        self.assertEqual(recall_at_k(results, self.truth, 10), 1.0)

    def test_compression_is_exactly_four_to_one(self):
        memory = self.index.memory_footprint()
        self.assertEqual(memory["codes_bytes"], 2000 * 32)
        self.assertEqual(memory["raw_bytes"], 4 * 2000 * 32)

    def test_full_rerank_maximizes_recall(self):
        recalls = []
        for n_rerank in (0, 10, 20, 40, 55):
            config = SearchConfig(k=10, n_rerank=n_rerank, early_termination=False)
            recalls.append(recall_at_k(search_batch(self.index, self.queries, config), self.truth, 10))
        self.assertEqual(max(recalls), recalls[-1])

    def test_save_load_preserves_transcripts(self):
        loaded = GraphIndex.from_bytes(self.index.to_bytes())
        config = SearchConfig(k=10)
        for q in self.queries:
            self.assertEqual(search(loaded, q, config).results, search(self.index, q, config).results)

    def test_disabled_thresholds_over_many_queries(self):
        queries = gen_queries(self.dataset, 1000, noise=0.3, seed=5)
        never = SearchConfig(tau_gap=float("inf"), tau_ratio=float("inf"))
        off = SearchConfig(early_termination=False)
        a = search_batch(self.index, queries.data, never)
        b = search_batch(self.index, queries.data, off)
        self.assertEqual([r.results for r in a], [r.results for r in b])
        self.assertEqual([r.stats for r in a], [r.stats for r in b])


class KernelThroughputTests(SimpleTestCase):

    def test_vector_tier_beats_scalar(self):
        vector_tiers = [t for t in host_tiers() if t is not KernelTier.SCALAR]
        if not vector_tiers:
            self.skipTest("no vector tier on this host")
        rng = np.random.default_rng(0)
        codes = rng.integers(0, 256, size=(2000, 128), dtype=np.uint8)
        qhat = rng.integers(0, 256, size=128, dtype=np.uint8)
        ids = np.arange(2000)

        def best_of(kernels, rounds=3):
            kernels.quantized_sum_many(qhat, codes, ids)
            best = float("inf")
            for _ in range(rounds):
                started = time.perf_counter()
                kernels.quantized_sum_many(qhat, codes, ids)
                best = min(best, time.perf_counter() - started)
            return best

        scalar = best_of(kernels_for_tier(KernelTier.SCALAR))
        vector = best_of(kernels_for_tier(vector_tiers[0]))
        self.assertGreaterEqual(scalar / vector, 2.0)


@tag("slow")
class ClusteredBenchmarkTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.dataset, cls.queries = split_holdout(gen_clustered(100200, 128, 10, 20.0, seed=1), 200)
        cls.truth = ground_truth(cls.dataset, cls.queries, 10)
        # Compile both traversal variants outside the timed builds.
        warm = gen_clustered(500, 128, 10, 20.0, seed=3)
        for mode in (GraphMode.AQR, GraphMode.BASELINE):
            search(build(warm, BuildConfig(m0=16, ef0=200, mode=mode)), warm.data[0])
        cls.aqr = build(cls.dataset, BuildConfig(m0=16, ef0=200, mode=GraphMode.AQR))
        cls.baseline = build(cls.dataset, BuildConfig(m0=16, ef0=200, mode=GraphMode.BASELINE))

    def test_recall_at_preset(self):
        report = measure(self.aqr, self.queries, preset("0.95-0.97").to_config(), warmup=20, truth=self.truth)
        self.assertGreaterEqual(report.recall_at_k, 0.93)

    def test_layer0_reachability(self):
        for index in (self.aqr, self.baseline):
            report = index.audit()
            self.assertTrue(report.ok, report.to_dict())
            self.assertGreaterEqual(report.reachable_fraction, 0.99, index.mode.value)

    def test_build_speedup(self):
        self.assertLessEqual(self.aqr.build_seconds, 0.67 * self.baseline.build_seconds)

    def test_early_termination_saves_exact_work(self):
        on = measure(self.aqr, self.queries, preset("0.95-0.97").to_config(), warmup=0, truth=self.truth)
        off = measure(self.aqr, self.queries, preset("0.95-0.97").to_config(early_termination=False),
                      warmup=0, truth=self.truth)
        self.assertLessEqual(on.mean_exact_computed, 0.8 * off.mean_exact_computed)
        self.assertLessEqual(off.recall_at_k - on.recall_at_k, 0.01)

    def test_throughput_and_tail_latency_at_matched_recall(self):
        aqr = measure(self.aqr, self.queries, preset("0.95-0.97").to_config(), warmup=20, repeats=3,
                      truth=self.truth)
        # Cheapest baseline beam whose recall comes within 0.01 of the aqr run.
        matched = None
        for ef in (10, 16, 24, 32, 48, 64, 96, 128, 192, 256, 384, 512):
            report = measure(self.baseline, self.queries, SearchConfig(k=10, ef_search=ef), warmup=20,
                             repeats=3, truth=self.truth)
            if report.recall_at_k >= aqr.recall_at_k - 0.01:
                matched = report
                break
        if matched is None:
            self.fail(f"baseline never reached recall {aqr.recall_at_k:.4f}")
        logger.info(f"QPS ratio {aqr.qps / matched.qps:.2f}, P99 ratio {matched.latency_p99 / aqr.latency_p99:.2f}")
        self.assertGreaterEqual(aqr.qps, 1.5 * matched.qps)
        self.assertLessEqual(aqr.latency_p99, matched.latency_p99)
