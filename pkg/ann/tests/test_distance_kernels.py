import os
from unittest import mock

import numpy as np
from django.test import SimpleTestCase

from ann.services.adaptive_quantizer import QuantizationParams, decode
from ann.services.distance_kernels import (
    FORCE_KERNEL_ENV,
    TIER_ORDER,
    KernelTier,
    encode_query_scalar,
    encode_query_vectorized,
    host_tiers,
    kernels_for_tier,
    resolve_tier,
    select_kernels,
)
from ann.services.exceptions import ConfigurationError, DimensionMismatchError

VECTOR_TIERS = [KernelTier.WIDEST_VECTOR, KernelTier.WIDE_VECTOR, KernelTier.BASELINE_VECTOR]


def _codes(rng, *shape):
    return rng.integers(0, 256, size=shape, dtype=np.uint8)


class HandExampleTests(SimpleTestCase):

    def test_examples_on_every_tier(self):
        for tier in TIER_ORDER:
            kernels = kernels_for_tier(tier)
            with self.subTest(tier=tier.value):
                qhat = np.array([10, 20], dtype=np.uint8)
                xhat = np.array([13, 24], dtype=np.uint8)
                self.assertEqual(kernels.dist_quantized(qhat, xhat, 1.0), 25.0)
                self.assertEqual(kernels.dist_quantized(qhat, xhat, 0.2), 0.2 * 25)
                self.assertEqual(kernels.dist_asym(np.array([1.0, 2.0]), np.array([0.0, 0.0])), 5.0)
                self.assertEqual(kernels.dist_exact(np.zeros(2, np.float32), np.array([3, 4], np.float32)), 25.0)

    def test_length_mismatch(self):
        for tier in TIER_ORDER:
            kernels = kernels_for_tier(tier)
            with self.subTest(tier=tier.value):
                with self.assertRaises(DimensionMismatchError):
                    kernels.dist_exact(np.zeros(3, np.float32), np.zeros(4, np.float32))
                with self.assertRaises(DimensionMismatchError):
                    kernels.dist_quantized(np.zeros(3, np.uint8), np.zeros(2, np.uint8), 1.0)


class CrossTierTests(SimpleTestCase):

    def test_quantized_sums_are_identical(self):
        rng = np.random.default_rng(0)
        scalar = kernels_for_tier(KernelTier.SCALAR)
        for d in (7, 8, 128, 960):
            codes = _codes(rng, 40, d)
            qhat = _codes(rng, d)
            ids = np.arange(40)
            expected = scalar.quantized_sum_many(qhat, codes, ids)
            for tier in VECTOR_TIERS:
                with self.subTest(d=d, tier=tier.value):
                    got = kernels_for_tier(tier).quantized_sum_many(qhat, codes, ids)
                    np.testing.assert_array_equal(got, expected)
                    self.assertEqual(kernels_for_tier(tier).quantized_sum_impl(qhat, codes[3]), expected[3])

    def test_float_kernels_agree(self):
        rng = np.random.default_rng(1)
        scalar = kernels_for_tier(KernelTier.SCALAR)
        for d in (7, 8, 128, 960):
            raw = rng.standard_normal((30, d)).astype(np.float32)
            q = rng.standard_normal(d).astype(np.float32)
            codes = _codes(rng, 30, d)
            mins = rng.uniform(-2, 0, size=d)
            scales = 255.0 / rng.uniform(0.5, 4.0, size=d)
            ids = rng.permutation(30)[:12]
            exact = scalar.exact_many(q, raw, ids)
            asym = scalar.asym_many(q, codes, ids, mins, scales)
            for tier in VECTOR_TIERS:
                kernels = kernels_for_tier(tier)
                with self.subTest(d=d, tier=tier.value):
                    np.testing.assert_allclose(kernels.exact_many(q, raw, ids), exact, rtol=1e-5)
                    np.testing.assert_allclose(kernels.asym_many(q, codes, ids, mins, scales), asym, rtol=1e-5)

    def test_wide_code_sums_do_not_overflow(self):
        d = 70000
        zeros = np.zeros(d, dtype=np.uint8)
        full = np.full(d, 255, dtype=np.uint8)
        expected = d * 255 * 255
        self.assertGreater(expected, 2 ** 32)
        for tier in TIER_ORDER:
            with self.subTest(tier=tier.value):
                self.assertEqual(kernels_for_tier(tier).quantized_sum_impl(zeros, full), expected)

    def test_asymmetric_matches_decoded_vector(self):
        rng = np.random.default_rng(2)
        d = 24
        params = QuantizationParams(
            d=d, mins=rng.uniform(-1, 0, d), maxs=rng.uniform(1, 2, d),
            scales=rng.uniform(50, 120, d), s_dist=1.0, p_low=0.0, p_high=100.0,
        )
        codes = _codes(rng, 5, d)
        q = rng.standard_normal(d)
        expected = ((decode(codes, params) - q) ** 2).sum(axis=1)
        for tier in TIER_ORDER:
            got = kernels_for_tier(tier).asym_many(q, codes, np.arange(5), params.mins, params.scales)
            np.testing.assert_allclose(got, expected, rtol=1e-9)

    def test_ordering_is_independent_of_distance_scale(self):
        rng = np.random.default_rng(3)
        kernels = kernels_for_tier(KernelTier.BASELINE_VECTOR)
        qhat, a, b = _codes(rng, 32), _codes(rng, 32), _codes(rng, 32)
        for s_dist in (0.01, 1.0, 7.5):
            self.assertEqual(
                kernels.dist_quantized(qhat, a, s_dist) < kernels.dist_quantized(qhat, b, s_dist),
                kernels.quantized_sum_impl(qhat, a) < kernels.quantized_sum_impl(qhat, b),
            )


class RandomPairTests(SimpleTestCase):
    """50 queries against 2000 rows per dimension: 10^5 pairs per kernel and tier."""

    DIMENSIONS = (7, 128, 960)

    def _pairs(self, d):
        rng = np.random.default_rng(d)
        codes = _codes(rng, 2000, d)
        qhats = _codes(rng, 50, d)
        raw = rng.standard_normal((2000, d)).astype(np.float32) * 4
        queries = rng.standard_normal((50, d)).astype(np.float32) * 4
        mins = rng.uniform(-6, -2, size=d)
        scales = 255.0 / rng.uniform(4.0, 12.0, size=d)
        return codes, qhats, raw, queries, mins, scales

    def test_vector_tiers_against_references(self):
        ids = np.arange(2000)
        for d in self.DIMENSIONS:
            codes, qhats, raw, queries, mins, scales = self._pairs(d)
            decoded = codes.astype(np.float64) / scales + mins
            for tier in VECTOR_TIERS:
                kernels = kernels_for_tier(tier)
                with self.subTest(d=d, tier=tier.value):
                    for qhat, q in zip(qhats, queries):
                        sums = ((codes.astype(np.int64) - qhat.astype(np.int64)) ** 2).sum(axis=1)
                        np.testing.assert_array_equal(kernels.quantized_sum_many(qhat, codes, ids), sums)
                        exact = ((raw.astype(np.float64) - q.astype(np.float64)) ** 2).sum(axis=1)
                        np.testing.assert_allclose(kernels.exact_many(q, raw, ids), exact, rtol=1e-5)
                        asym = ((decoded - q.astype(np.float64)) ** 2).sum(axis=1)
                        np.testing.assert_allclose(kernels.asym_many(q, codes, ids, mins, scales), asym, rtol=1e-5)

    def test_scalar_tier_on_a_subset(self):
        scalar = kernels_for_tier(KernelTier.SCALAR)
        ids = np.arange(0, 2000, 97)
        for d in self.DIMENSIONS:
            codes, qhats, raw, queries, mins, scales = self._pairs(d)
            with self.subTest(d=d):
                for qhat, q in zip(qhats[:3], queries[:3]):
                    sums = ((codes[ids].astype(np.int64) - qhat.astype(np.int64)) ** 2).sum(axis=1)
                    np.testing.assert_array_equal(scalar.quantized_sum_many(qhat, codes, ids), sums)
                    exact = ((raw[ids].astype(np.float64) - q.astype(np.float64)) ** 2).sum(axis=1)
                    np.testing.assert_allclose(scalar.exact_many(q, raw, ids), exact, rtol=1e-5)


class EncodeQueryTests(SimpleTestCase):

    def test_scalar_and_vectorized_encodes_agree(self):
        rng = np.random.default_rng(4)
        d = 33
        mins = rng.uniform(-3, 0, d)
        maxs = mins + rng.uniform(0.5, 5, d)
        maxs[5] = mins[5]
        scales = np.where(maxs - mins < 1e-9, 1.0, 255.0 / (maxs - mins + 1e-6))
        params = QuantizationParams(d=d, mins=mins, maxs=maxs, scales=scales, s_dist=1.0,
                                    p_low=0.0, p_high=100.0)
        for _ in range(50):
            q = rng.uniform(mins - 1, maxs + 1)
            np.testing.assert_array_equal(encode_query_scalar(q, params), encode_query_vectorized(q, params))
        self.assertEqual(encode_query_scalar(q, params)[5], 0)

    def test_hundred_thousand_vectors(self):
        rng = np.random.default_rng(6)
        d = 12
        mins = rng.uniform(-3, 0, d)
        maxs = mins + rng.uniform(0.5, 5, d)
        scales = 255.0 / (maxs - mins + 1e-6)
        params = QuantizationParams(d=d, mins=mins, maxs=maxs, scales=scales, s_dist=1.0,
                                    p_low=0.0, p_high=100.0)
        queries = rng.uniform(mins - 1, maxs + 1, size=(100000, d))
        # Exact code boundaries and the clamp edges.
        queries[0] = mins
        queries[1] = maxs
        queries[2] = mins + 0.5 / scales
        expected = np.stack([encode_query_scalar(q, params) for q in queries])
        np.testing.assert_array_equal(encode_query_vectorized(queries, params), expected)


class DispatchTests(SimpleTestCase):

    def setUp(self):
        resolve_tier.cache_clear()
        self.addCleanup(resolve_tier.cache_clear)

    def test_host_tiers_end_with_scalar(self):
        tiers = host_tiers()
        self.assertEqual(tiers[-1], KernelTier.SCALAR)
        self.assertEqual(tiers, sorted(tiers, key=TIER_ORDER.index))

    def test_forced_scalar(self):
        self.assertIs(select_kernels("scalar").active_tier, KernelTier.SCALAR)
        with mock.patch.dict(os.environ, {FORCE_KERNEL_ENV: "scalar"}):
            self.assertIs(select_kernels().active_tier, KernelTier.SCALAR)

    def test_auto_picks_widest_available(self):
        self.assertIs(select_kernels("auto").active_tier, host_tiers()[0])

    def test_invalid_override(self):
        with self.assertRaises(ConfigurationError):
            select_kernels("avx9000")

    def test_unsupported_tier_falls_back(self):
        with mock.patch("ann.services.distance_kernels.host_tiers",
                        return_value=[KernelTier.BASELINE_VECTOR, KernelTier.SCALAR]):
            with self.assertLogs("ann.services.distance_kernels", level="WARNING"):
                kernels = select_kernels("widest-vector")
        self.assertIs(kernels.active_tier, KernelTier.BASELINE_VECTOR)

    def test_tier_is_resolved_once_per_process(self):
        with mock.patch("ann.services.distance_kernels.host_tiers",
                        return_value=[KernelTier.BASELINE_VECTOR, KernelTier.SCALAR]) as tiers:
            with self.assertLogs("ann.services.distance_kernels", level="INFO") as logs:
                for _ in range(5):
                    self.assertIs(select_kernels("auto").active_tier, KernelTier.BASELINE_VECTOR)
        self.assertEqual(tiers.call_count, 1)
        self.assertEqual(len([line for line in logs.output if "Distance kernels" in line]), 1)
