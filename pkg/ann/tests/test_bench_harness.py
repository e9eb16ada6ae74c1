import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from ann.services.bench_harness import (
    PRESETS,
    BenchReport,
    compare_builds,
    ground_truth,
    kernel_benchmark,
    latency_histogram,
    measure,
    nearest_rank,
    preset,
    read_csv,
    recall_at_k,
    sweep,
    write_csv,
    write_latency_csv,
)
from ann.services.exceptions import ConfigurationError, MeasurementError
from ann.services.hnsw_graph import BuildConfig, GraphMode, build
from ann.services.search_pipeline import SearchConfig, search
from ann.services.vector_store import Dataset, gen_clustered, gen_queries


class PresetTests(SimpleTestCase):

    def test_rows(self):
        rows = {
            "0.85-0.90": (35, 12, 0.020, 1.015, 2),
            "0.90-0.95": (45, 16, 0.015, 1.012, 2),
            "0.95-0.97": (55, 20, 0.012, 1.010, 3),
            "0.97+": (70, 28, 0.010, 1.008, 3),
        }
        self.assertEqual(list(PRESETS), list(rows))
        for name, values in rows.items():
            p = preset(name).validate()
            self.assertEqual((p.n_coarse, p.n_rerank, p.tau_gap, p.tau_ratio, p.m_ef), values)

    def test_lookup(self):
        self.assertIs(preset("0.90–0.95"), PRESETS["0.90-0.95"])
        with self.assertRaises(ConfigurationError):
            preset("0.99")

    def test_to_config_overrides(self):
        config = preset("0.97+").to_config(k=5, early_termination=False, n_rerank=10, tau_gap=None)
        self.assertEqual((config.k, config.n_coarse, config.n_rerank), (5, 70, 10))
        self.assertEqual(config.tau_gap, 0.010)
        self.assertFalse(config.early_termination)
        self.assertEqual(config.beam_width, 210)


class GroundTruthTests(SimpleTestCase):

    def test_self_match_first(self):
        dataset = gen_clustered(300, 5, 3, 4.0, seed=0)
        truth = ground_truth(dataset, dataset.data[:20], 5)
        self.assertEqual(truth.dtype, np.int32)
        self.assertEqual(truth.shape, (20, 5))
        np.testing.assert_array_equal(truth[:, 0], np.arange(20))

    def test_k_equal_to_n_is_a_permutation(self):
        dataset = gen_clustered(40, 3, 2, 2.0, seed=1)
        truth = ground_truth(dataset, gen_queries(dataset, 4, noise=0.1, seed=2), 40)
        for row in truth:
            self.assertEqual(sorted(row.tolist()), list(range(40)))

    def test_matches_sorted_distance_matrix(self):
        rng = np.random.default_rng(3)
        dataset = Dataset(rng.standard_normal((200, 6)).astype(np.float32))
        queries = rng.standard_normal((15, 6)).astype(np.float32)
        truth = ground_truth(dataset, queries, 10, workers=2)
        sq = ((queries[:, None, :].astype(np.float64) - dataset.data[None, :, :]) ** 2).sum(axis=2)
        np.testing.assert_array_equal(truth, np.argsort(sq, axis=1, kind="stable")[:, :10])

    def test_ties_break_by_id(self):
        dataset = Dataset(np.array([[1, 0], [0, 1], [-1, 0], [0, -1], [5, 5]], dtype=np.float32))
        truth = ground_truth(dataset, np.zeros((1, 2), np.float32), 3)
        self.assertEqual(truth[0].tolist(), [0, 1, 2])

    def test_invalid_inputs(self):
        dataset = gen_clustered(20, 3, 2, 2.0, seed=1)
        with self.assertRaises(ConfigurationError):
            ground_truth(dataset, dataset.data, 21)
        with self.assertRaises(MeasurementError):
            ground_truth(dataset, np.zeros((2, 4), np.float32), 3)


class RecallTests(SimpleTestCase):

    def test_examples(self):
        truth = np.array([[1, 2, 3, 4, 5]])
        self.assertEqual(recall_at_k([[1, 2, 3, 4, 5]], truth, 5), 1.0)
        self.assertEqual(recall_at_k([[5, 4, 3, 2, 1]], truth, 5), 1.0)
        self.assertEqual(recall_at_k([[1, 2, 3, 4, 9]], truth, 5), 0.8)
        self.assertEqual(recall_at_k([[6, 7, 8, 9, 10]], truth, 5), 0.0)

    def test_mean_over_queries(self):
        truth = np.array([[0, 1], [2, 3]])
        self.assertEqual(recall_at_k([[0, 1], [2, 9]], truth, 2), 0.75)

    def test_misaligned(self):
        with self.assertRaises(MeasurementError):
            recall_at_k([[1, 2]], np.array([[1, 2], [3, 4]]), 2)
        with self.assertRaises(MeasurementError):
            recall_at_k([], np.zeros((0, 2)), 2)
        with self.assertRaises(MeasurementError):
            recall_at_k([[1, 2]], np.array([[1, 2]]), 3)


class MeasurementTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.dataset = gen_clustered(600, 8, 4, 8.0, seed=12)
        cls.queries = gen_queries(cls.dataset, 25, noise=0.1, seed=13)
        cls.index = build(cls.dataset, BuildConfig(m0=8, ef0=48))
        cls.truth = ground_truth(cls.dataset, cls.queries, 10)

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_nearest_rank(self):
        sample = [15, 20, 35, 40, 50]
        self.assertEqual(nearest_rank(sample, 50), 35)
        self.assertEqual(nearest_rank(sample, 90), 50)
        self.assertEqual(nearest_rank(sample, 30), 20)
        self.assertEqual(nearest_rank([7.0], 99), 7.0)

    def test_report(self):
        report = measure(self.index, self.queries, SearchConfig(k=10), warmup=5, repeats=2,
                         truth=self.truth, dataset_name="clustered")
        self.assertEqual(report.mode, "aqr")
        self.assertEqual(report.n_queries, 25)
        self.assertEqual(len(report.latencies_us), 50)
        self.assertGreater(report.qps, 0)
        self.assertLessEqual(report.latency_p50, report.latency_p90)
        self.assertLessEqual(report.latency_p90, report.latency_p99)
        self.assertTrue(0.0 <= report.recall_at_k <= 1.0)
        self.assertTrue(0.0 <= report.early_termination_rate <= 1.0)
        self.assertEqual(report.config["n_coarse"], 55)

    def test_recall_matches_direct_computation(self):
        config = SearchConfig(k=10)
        report = measure(self.index, self.queries, config, warmup=0, truth=self.truth)
        direct = recall_at_k([search(self.index, q, SearchConfig(k=10)) for q in self.queries.data],
                             self.truth, 10)
        self.assertEqual(report.recall_at_k, direct)

    def test_zero_queries(self):
        with self.assertRaises(MeasurementError):
            measure(self.index, np.zeros((0, 8), np.float32))
        with self.assertRaises(MeasurementError):
            measure(self.index, self.queries, repeats=0)

    def test_sweep(self):
        reports = sweep(self.index, self.queries, self.truth, "n_coarse", [20, 30, 45, 60],
                        base_config=SearchConfig(k=10, n_rerank=15))
        self.assertEqual([r.config["n_coarse"] for r in reports], [20, 30, 45, 60])
        self.assertTrue(all(r.recall_at_k is not None for r in reports))

    def test_sweep_sorts_values_and_rejects_unknown_axes(self):
        with self.assertLogs("ann.services.bench_harness", level="WARNING"):
            reports = sweep(self.index, self.queries, None, "tau_gap", [0.02, 0.01])
        self.assertEqual([r.config["tau_gap"] for r in reports], [0.01, 0.02])
        self.assertIsNone(reports[0].recall_at_k)
        with self.assertRaises(ConfigurationError):
            sweep(self.index, self.queries, None, "beam", [1])
        with self.assertRaises(ConfigurationError):
            sweep(self.index, self.queries, None, "n_coarse", [])

    def test_sweep_builds_from_dataset(self):
        small = gen_clustered(200, 4, 2, 3.0, seed=1)
        reports = sweep((small, BuildConfig(m0=6, ef0=32)), small.data[:5], None, "m_ef", [1])
        self.assertEqual(len(reports), 1)
        self.assertEqual(reports[0].n, 200)

    def test_csv_round_trip(self):
        report = measure(self.index, self.queries, SearchConfig(k=10), warmup=0, truth=self.truth)
        path = self.tmp / "out" / "bench.csv"
        write_csv([report], path)
        (row,) = read_csv(path)
        self.assertEqual(row["mode"], "aqr")
        self.assertEqual(row["n_queries"], 25)
        self.assertEqual(row["cfg_n_coarse"], 55)
        self.assertIs(row["cfg_early_termination"], True)
        self.assertIsNone(row["cfg_ef_search"])
        self.assertAlmostEqual(row["recall_at_k"], report.recall_at_k)
        self.assertNotIn("latencies_us", row)

    def test_latency_histogram(self):
        report = measure(self.index, self.queries, warmup=0)
        edges, counts = latency_histogram(report, bins=5)
        self.assertEqual(len(edges), 6)
        self.assertEqual(int(counts.sum()), 25)
        path = self.tmp / "latency.csv"
        write_latency_csv(report, path, bins=5)
        self.assertEqual(sum(row["count"] for row in read_csv(path)), 25)
        with self.assertRaises(MeasurementError):
            latency_histogram(BenchReport(
                mode="aqr", dataset="", n=0, d=0, build_seconds=0.0, n_queries=0, qps=0.0,
                recall_at_k=None, latency_p50=0.0, latency_p90=0.0, latency_p99=0.0,
                mean_exact_computed=0.0, mean_coarse_evaluated=0.0, early_termination_rate=0.0,
                search_bytes=0,
            ))

    def test_empty_csv(self):
        with self.assertRaises(MeasurementError):
            write_csv([], self.tmp / "none.csv")


class BuildComparisonTests(SimpleTestCase):

    def test_compare_builds(self):
        dataset = gen_clustered(300, 6, 3, 5.0, seed=4)
        reports = compare_builds(dataset, BuildConfig(m0=6, ef0=32))
        self.assertEqual([r.mode for r in reports], ["baseline-fp32", "scalar-quant", "aqr"])
        self.assertEqual(reports[0].speedup_vs_baseline, 1.0)
        self.assertIsNone(reports[0].delta)
        self.assertIsNotNone(reports[2].delta)
        self.assertGreaterEqual(reports[2].m, 6)

    def test_without_baseline(self):
        dataset = gen_clustered(150, 4, 2, 3.0, seed=5)
        reports = compare_builds(dataset, BuildConfig(m0=4, ef0=16), modes=["aqr"])
        self.assertEqual(len(reports), 1)
        self.assertIsNone(reports[0].speedup_vs_baseline)


class KernelBenchmarkTests(SimpleTestCase):

    def test_rows_cover_every_tier(self):
        rows = kernel_benchmark(d=32, pairs=200)
        tiers = {row.tier for row in rows}
        self.assertIn("scalar", tiers)
        self.assertEqual(len(rows), 2 * len(tiers))
        for row in rows:
            if row.tier == "scalar":
                self.assertEqual(row.speedup_vs_scalar, 1.0)
            self.assertGreater(row.ns_per_pair, 0)

    def test_invalid_sizes(self):
        with self.assertRaises(ConfigurationError):
            kernel_benchmark(d=0)
