"""
Distance Kernels
================
The three squared-distance functions of the search pipeline (quantized,
asymmetric, exact) plus query encoding, each in a scalar reference form and
in numba-compiled vector tiers whose lane width matches the register width
of the target instruction set:

    widest-vector    64 byte lanes (AVX-512)
    wide-vector      32 byte lanes (AVX2)
    baseline-vector  16 byte lanes (SSE2 / NEON)
    scalar           pure Python reference

The tier is resolved once from the host's CPU features and cached; the
environment variable AQR_FORCE_KERNEL can force any lower tier.
"""

import logging
import os
import platform
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable, List, Optional

import numpy as np
from numba import njit

from .adaptive_quantizer import CODE_MAX, QuantizationParams, encode
from .exceptions import ConfigurationError, DimensionMismatchError

logger = logging.getLogger(__name__)

FORCE_KERNEL_ENV = "AQR_FORCE_KERNEL"
# Past this many elements per lane the 32-bit lane accumulators are flushed.
INT32_SAFE_DIM = 4096


# ============================================================================
# Type Definitions
# ============================================================================

class KernelTier(Enum):
    """Kernel tiers, widest first."""
    WIDEST_VECTOR = "widest-vector"
    WIDE_VECTOR = "wide-vector"
    BASELINE_VECTOR = "baseline-vector"
    SCALAR = "scalar"

    @property
    def lanes(self) -> int:
        return _LANES[self]


_LANES = {
    KernelTier.WIDEST_VECTOR: 64,
    KernelTier.WIDE_VECTOR: 32,
    KernelTier.BASELINE_VECTOR: 16,
    KernelTier.SCALAR: 1,
}

TIER_ORDER: List[KernelTier] = [
    KernelTier.WIDEST_VECTOR,
    KernelTier.WIDE_VECTOR,
    KernelTier.BASELINE_VECTOR,
    KernelTier.SCALAR,
]


@dataclass(frozen=True)
class KernelSet:
    """
    Function handles for one tier.

    Single-pair kernels take two vectors; the ``*_many`` forms score one
    query against ``rows[ids]`` of a stored matrix. ``cores`` holds the
    compiled pair functions that graph traversal calls from jitted code.
    """
    active_tier: KernelTier
    dist_quantized_impl: Callable[[np.ndarray, np.ndarray, float], float]
    dist_asym_impl: Callable[[np.ndarray, np.ndarray], float]
    dist_exact_impl: Callable[[np.ndarray, np.ndarray], float]
    encode_query_impl: Callable[[np.ndarray, QuantizationParams], np.ndarray]
    quantized_sum_impl: Callable[[np.ndarray, np.ndarray], int]
    quantized_sum_many: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    exact_many: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    asym_many: Callable[..., np.ndarray]
    cores: "TierCores"

    def dist_quantized(self, qhat: np.ndarray, xhat: np.ndarray, s_dist: float) -> float:
        return self.dist_quantized_impl(qhat, xhat, s_dist)

    def dist_asym(self, q: np.ndarray, xtilde: np.ndarray) -> float:
        return self.dist_asym_impl(q, xtilde)

    def dist_exact(self, q: np.ndarray, x: np.ndarray) -> float:
        return self.dist_exact_impl(q, x)

    def encode_query(self, q: np.ndarray, params: QuantizationParams) -> np.ndarray:
        return self.encode_query_impl(q, params)


@dataclass(frozen=True)
class TierCores:
    """Compiled single-pair cores of one lane width, callable from other jitted code."""
    lanes: int
    quantized: Callable
    sq_euclidean: Callable


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise DimensionMismatchError(f"length mismatch: {a.shape[-1]} != {b.shape[-1]}")


# ============================================================================
# Scalar Reference
# ============================================================================

def quantized_sum_scalar(qhat: np.ndarray, xhat: np.ndarray) -> int:
    """Exact integer sum of squared code differences."""
    _check_pair(qhat, xhat)
    total = 0
    for a, b in zip(np.asarray(qhat).tolist(), np.asarray(xhat).tolist()):
        diff = a - b
        total += diff * diff
    return total


def dist_quantized_scalar(qhat: np.ndarray, xhat: np.ndarray, s_dist: float) -> float:
    return s_dist * quantized_sum_scalar(qhat, xhat)


def sq_euclidean_scalar(q: np.ndarray, x: np.ndarray) -> float:
    """Squared Euclidean distance with float64 accumulation."""
    _check_pair(q, x)
    total = 0.0
    for a, b in zip(np.asarray(q, dtype=np.float64).tolist(), np.asarray(x, dtype=np.float64).tolist()):
        diff = a - b
        total += diff * diff
    return total


def encode_query_scalar(q: np.ndarray, params: QuantizationParams) -> np.ndarray:
    """Element-at-a-time encode with the quantizer's clamp and rounding rules."""
    values = np.asarray(q, dtype=np.float64)
    if values.shape[-1] != params.d:
        raise DimensionMismatchError(f"vector has {values.shape[-1]} dimensions, quantizer has {params.d}")
    out = np.zeros(params.d, dtype=np.uint8)
    degenerate = params.degenerate
    for j, value in enumerate(values.tolist()):
        if degenerate[j]:
            continue
        scaled = (value - params.mins[j]) * params.scales[j]
        scaled = min(max(scaled, 0.0), float(CODE_MAX))
        out[j] = int(np.floor(scaled + 0.5))
    return out


def _scalar_quantized_many(qhat, codes, ids):
    return np.array([quantized_sum_scalar(qhat, codes[i]) for i in ids], dtype=np.int64)


def _scalar_exact_many(q, raw, ids):
    return np.array([sq_euclidean_scalar(q, raw[i]) for i in ids], dtype=np.float64)


def _scalar_asym_many(q, codes, ids, mins, scales):
    out = np.empty(len(ids), dtype=np.float64)
    for slot, i in enumerate(ids):
        xtilde = codes[i].astype(np.float64) / scales + mins
        out[slot] = sq_euclidean_scalar(q, xtilde)
    return out


# ============================================================================
# Vector Tiers
# ============================================================================

def _compile_tier(lanes: int):
    """
    Compile lane-blocked kernels; every tier shares the scalar remainder arithmetic.

    The ``*_core`` forms take a caller-owned lane accumulator so that graph
    traversal can score thousands of rows without allocating.
    """
    flush_blocks = max(1, INT32_SAFE_DIM // lanes)

    @njit(nogil=True, cache=False)
    def quantized_core(a, b, acc):
        d = a.shape[0]
        for lane in range(lanes):
            acc[lane] = 0
        total = np.int64(0)
        blocks = d // lanes
        for blk in range(blocks):
            base = blk * lanes
            for lane in range(lanes):
                # Code difference widened before squaring into a 32-bit lane.
                diff = np.int32(a[base + lane]) - np.int32(b[base + lane])
                acc[lane] += np.uint32(diff * diff)
            if (blk + 1) % flush_blocks == 0:
                for lane in range(lanes):
                    total += np.int64(acc[lane])
                    acc[lane] = 0
        for lane in range(lanes):
            total += np.int64(acc[lane])
        for j in range(blocks * lanes, d):
            diff = np.int64(a[j]) - np.int64(b[j])
            total += diff * diff
        return total

    @njit(nogil=True, cache=False)
    def sq_core(a, b, acc):
        d = a.shape[0]
        for lane in range(lanes):
            acc[lane] = 0.0
        blocks = d // lanes
        for blk in range(blocks):
            base = blk * lanes
            for lane in range(lanes):
                diff = np.float64(a[base + lane]) - np.float64(b[base + lane])
                acc[lane] += diff * diff
        total = 0.0
        for lane in range(lanes):
            total += acc[lane]
        for j in range(blocks * lanes, d):
            diff = np.float64(a[j]) - np.float64(b[j])
            total += diff * diff
        return total

    @njit(nogil=True, cache=False)
    def quantized_sum(a, b):
        return quantized_core(a, b, np.zeros(lanes, dtype=np.uint32))

    @njit(nogil=True, cache=False)
    def sq_euclidean(a, b):
        return sq_core(a, b, np.zeros(lanes, dtype=np.float64))

    @njit(nogil=True, cache=False)
    def quantized_sum_many(qhat, codes, ids):
        out = np.empty(ids.shape[0], dtype=np.int64)
        acc = np.zeros(lanes, dtype=np.uint32)
        for slot in range(ids.shape[0]):
            out[slot] = quantized_core(qhat, codes[ids[slot]], acc)
        return out

    @njit(nogil=True, cache=False)
    def exact_many(q, raw, ids):
        out = np.empty(ids.shape[0], dtype=np.float64)
        acc = np.zeros(lanes, dtype=np.float64)
        for slot in range(ids.shape[0]):
            out[slot] = sq_core(q, raw[ids[slot]], acc)
        return out

    @njit(nogil=True, cache=False)
    def asym_many(q, codes, ids, mins, scales):
        d = q.shape[0]
        out = np.empty(ids.shape[0], dtype=np.float64)
        xtilde = np.empty(d, dtype=np.float64)
        acc = np.zeros(lanes, dtype=np.float64)
        for slot in range(ids.shape[0]):
            row = codes[ids[slot]]
            for j in range(d):
                xtilde[j] = np.float64(row[j]) / scales[j] + mins[j]
            out[slot] = sq_core(q, xtilde, acc)
        return out

    return TierCores(lanes, quantized_core, sq_core), (
        quantized_sum, sq_euclidean, quantized_sum_many, exact_many, asym_many)


def encode_query_vectorized(q: np.ndarray, params: QuantizationParams) -> np.ndarray:
    """Whole-vector encode; bit-identical to ``encode_query_scalar``."""
    return encode(q, params)


def _as_ids(ids) -> np.ndarray:
    return np.ascontiguousarray(ids, dtype=np.int64)


@lru_cache(maxsize=None)
def kernels_for_tier(tier: KernelTier) -> KernelSet:
    """Build (and cache) the KernelSet of one tier, regardless of host support."""
    if tier is KernelTier.SCALAR:
        return KernelSet(
            active_tier=tier,
            dist_quantized_impl=dist_quantized_scalar,
            dist_asym_impl=sq_euclidean_scalar,
            dist_exact_impl=sq_euclidean_scalar,
            encode_query_impl=encode_query_scalar,
            quantized_sum_impl=quantized_sum_scalar,
            quantized_sum_many=_scalar_quantized_many,
            exact_many=_scalar_exact_many,
            asym_many=_scalar_asym_many,
            cores=_compile_tier(1)[0],
        )

    cores, (quantized_sum, sq_euclidean, quantized_many, exact_many, asym_many) = _compile_tier(tier.lanes)

    def dist_quantized(qhat, xhat, s_dist):
        _check_pair(qhat, xhat)
        return s_dist * int(quantized_sum(qhat, xhat))

    def quantized_sum_checked(qhat, xhat):
        _check_pair(qhat, xhat)
        return int(quantized_sum(qhat, xhat))

    def dist_float(q, x):
        _check_pair(q, x)
        return float(sq_euclidean(q, x))

    return KernelSet(
        active_tier=tier,
        dist_quantized_impl=dist_quantized,
        dist_asym_impl=dist_float,
        dist_exact_impl=dist_float,
        encode_query_impl=encode_query_vectorized,
        quantized_sum_impl=quantized_sum_checked,
        quantized_sum_many=lambda qhat, codes, ids: quantized_many(qhat, codes, _as_ids(ids)),
        exact_many=lambda q, raw, ids: exact_many(q, raw, _as_ids(ids)),
        asym_many=lambda q, codes, ids, mins, scales: asym_many(
            np.ascontiguousarray(q, dtype=np.float64), codes, _as_ids(ids), mins, scales
        ),
        cores=cores,
    )


# ============================================================================
# Dispatch
# ============================================================================

@lru_cache(maxsize=1)
def _host_cpu_features() -> frozenset:
    try:
        from llvmlite import binding

        features = binding.get_host_cpu_features()
        return frozenset(name for name, enabled in features.items() if enabled)
    except Exception as e:
        logger.debug(f"CPU feature query failed: {e}")
        return frozenset()


def host_tiers() -> List[KernelTier]:
    """Tiers the host can run, widest first; always ends with scalar."""
    features = _host_cpu_features()
    machine = platform.machine().lower()
    tiers = []
    if "avx512f" in features:
        tiers.append(KernelTier.WIDEST_VECTOR)
    if "avx2" in features:
        tiers.append(KernelTier.WIDE_VECTOR)
    if "sse2" in features or "neon" in features or machine in ("arm64", "aarch64"):
        tiers.append(KernelTier.BASELINE_VECTOR)
    tiers.append(KernelTier.SCALAR)
    return tiers


def _parse_override(value: str) -> Optional[KernelTier]:
    value = value.strip().lower()
    if value in ("", "auto"):
        return None
    try:
        return KernelTier(value)
    except ValueError:
        allowed = ", ".join(["auto"] + [t.value for t in TIER_ORDER])
        raise ConfigurationError(f"{FORCE_KERNEL_ENV}={value!r} is not one of: {allowed}")


@lru_cache(maxsize=None)
def resolve_tier(requested: Optional[KernelTier] = None) -> KernelTier:
    """
    Tier used for a request (None = widest available), resolved once per process.

    A tier wider than the host supports falls back to the widest supported one.
    """
    available = host_tiers()
    if requested is None:
        tier = available[0]
    elif requested in available:
        tier = requested
    else:
        tier = next(t for t in available if TIER_ORDER.index(t) > TIER_ORDER.index(requested))
        logger.warning(f"Kernel tier {requested.value} unavailable on this host; using {tier.value}")
    logger.info(f"Distance kernels: {tier.value} tier")
    return tier


def select_kernels(override: Optional[str] = None) -> KernelSet:
    """
    Pick the widest tier the host supports.

    Args:
        override: Tier name; defaults to the AQR_FORCE_KERNEL environment variable

    Returns:
        KernelSet of the selected tier
    """
    requested = _parse_override(override if override is not None else os.environ.get(FORCE_KERNEL_ENV, ""))
    return kernels_for_tier(resolve_tier(requested))
