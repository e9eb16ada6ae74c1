"""
Adaptive Quantizer
==================
Learns per-dimension 8-bit quantization ranges from density-adaptive
percentiles, encodes/decodes vectors, computes the global distance scale,
and derives the adapted graph construction parameters.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .density_profile import DEFAULT_EPSILON, DensityProfile
from .exceptions import ConfigurationError, DimensionMismatchError
from .vector_store import Dataset

logger = logging.getLogger(__name__)

CODE_MAX = 255
DEFAULT_P_MAX = 5.0
DEGENERATE_RANGE = 1e-9
MIN_EF_CONSTRUCTION = 16


# ============================================================================
# Type Definitions
# ============================================================================

@dataclass(frozen=True)
class QuantizationParams:
    """Trained per-dimension ranges plus the global distance scale."""

    d: int
    mins: np.ndarray
    maxs: np.ndarray
    scales: np.ndarray
    s_dist: float
    p_low: float
    p_high: float
    p_max: float = DEFAULT_P_MAX
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        for name in ("mins", "maxs", "scales"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (self.d,):
                raise DimensionMismatchError(f"{name} has shape {arr.shape}, expected ({self.d},)")
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.s_dist <= 0:
            raise ConfigurationError(f"s_dist must be positive, got {self.s_dist}")

    @property
    def degenerate(self) -> np.ndarray:
        """Mask of dimensions whose trained range collapsed to a point."""
        return (self.maxs - self.mins) < DEGENERATE_RANGE

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QuantizationParams):
            return NotImplemented
        return (
            self.d == other.d
            and np.array_equal(self.mins, other.mins)
            and np.array_equal(self.maxs, other.maxs)
            and np.array_equal(self.scales, other.scales)
            and self.s_dist == other.s_dist
            and self.p_low == other.p_low
            and self.p_high == other.p_high
            and self.p_max == other.p_max
            and self.epsilon == other.epsilon
        )


@dataclass(frozen=True)
class GraphParams:
    """Connectivity and construction depth actually used to build a graph."""

    m: int
    ef_construction: int
    m0: int
    ef0: int


# ============================================================================
# Training
# ============================================================================

def percentile_bounds(delta: float, p_max: float = DEFAULT_P_MAX) -> Tuple[float, float]:
    """
    Percentile bounds (P_l, P_h) on the [0, 100] scale.

    Args:
        delta: Global heterogeneity in [0, 1]
        p_max: Widest per-tail clipping, in (0, 50)

    Returns:
        (delta * p_max, 100 - delta * p_max)
    """
    if not 0.0 <= delta <= 1.0:
        raise ConfigurationError(f"delta must lie in [0, 1], got {delta}")
    if not 0.0 < p_max < 50.0:
        raise ConfigurationError(f"p_max must lie in (0, 50), got {p_max}")
    return delta * p_max, 100.0 - delta * p_max


def distance_scale(mins: np.ndarray, maxs: np.ndarray, weights: np.ndarray) -> float:
    """
    Global distance scale sqrt(sum((max-min)^2 * w) / sum(255^2 * w)).

    Args:
        mins: Per-dimension lower bounds
        maxs: Per-dimension upper bounds
        weights: Positive per-dimension weights
    """
    ranges = np.asarray(maxs, dtype=np.float64) - np.asarray(mins, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if ranges.shape != w.shape:
        raise DimensionMismatchError(f"{ranges.shape[0]} ranges but {w.shape[0]} weights")
    return math.sqrt(float((ranges ** 2 * w).sum()) / float((CODE_MAX ** 2 * w).sum()))


def _fit(
    data: np.ndarray,
    p_low: float,
    p_high: float,
    weights: np.ndarray,
    p_max: float,
    epsilon: float,
) -> QuantizationParams:
    values = data.astype(np.float64)
    mins = np.percentile(values, p_low, axis=0, method="linear")
    maxs = np.percentile(values, p_high, axis=0, method="linear")
    ranges = maxs - mins
    degenerate = ranges < DEGENERATE_RANGE
    scales = np.where(degenerate, 1.0, CODE_MAX / (ranges + epsilon))
    if degenerate.any():
        logger.warning(
            f"{int(degenerate.sum())} degenerate dimension(s) encode to a constant 0"
        )
    return QuantizationParams(
        d=data.shape[1],
        mins=mins,
        maxs=maxs,
        scales=scales,
        s_dist=_positive_scale(mins, maxs, weights),
        p_low=p_low,
        p_high=p_high,
        p_max=p_max,
        epsilon=epsilon,
    )


def _positive_scale(mins: np.ndarray, maxs: np.ndarray, weights: np.ndarray) -> float:
    s_dist = distance_scale(mins, maxs, weights)
    # An all-constant dataset has zero spread; any positive scale keeps ordering.
    return s_dist if s_dist > 0 else 1.0


def train(dataset: Dataset, profile: DensityProfile, p_max: float = DEFAULT_P_MAX,
          epsilon: Optional[float] = None) -> QuantizationParams:
    """
    Learn density-adaptive quantization parameters.

    Args:
        dataset: Dataset to quantize
        profile: Density profile computed from the same dataset
        p_max: Sensitivity range for percentile clipping
        epsilon: Stability constant; defaults to the profile's

    Returns:
        QuantizationParams
    """
    if profile.weights.shape[0] != dataset.d:
        raise DimensionMismatchError(
            f"profile has {profile.weights.shape[0]} weights for d={dataset.d}"
        )
    epsilon = profile.epsilon if epsilon is None else epsilon
    p_low, p_high = percentile_bounds(profile.delta, p_max)
    params = _fit(dataset.data, p_low, p_high, profile.weights, p_max, epsilon)
    logger.info(
        f"Quantizer trained: percentiles=({p_low:.3f}, {p_high:.3f}) "
        f"s_dist={params.s_dist:.6g}"
    )
    return params


def train_full_range(dataset: Dataset, epsilon: float = DEFAULT_EPSILON) -> QuantizationParams:
    """Plain min/max scalar quantization (the delta = 0 case, uniform weights)."""
    return _fit(dataset.data, 0.0, 100.0, np.ones(dataset.d), DEFAULT_P_MAX, epsilon)


# ============================================================================
# Encoding
# ============================================================================

def encode(x: np.ndarray, params: QuantizationParams) -> np.ndarray:
    """
    Quantize one vector or a matrix of row vectors to uint8 codes.

    q_j = round(clamp((x_j - min_j) * scale_j, 0, 255)), rounding half away
    from zero; degenerate dimensions always encode to 0.
    """
    x = np.asarray(x)
    if x.shape[-1] != params.d:
        raise DimensionMismatchError(f"vector has {x.shape[-1]} dimensions, quantizer has {params.d}")
    scaled = (x.astype(np.float64) - params.mins) * params.scales
    np.clip(scaled, 0.0, CODE_MAX, out=scaled)
    codes = np.floor(scaled + 0.5)
    codes[..., params.degenerate] = 0.0
    return codes.astype(np.uint8)


def decode(q: np.ndarray, params: QuantizationParams) -> np.ndarray:
    """Reconstruct x~_j = q_j / scale_j + min_j (float64)."""
    q = np.asarray(q)
    if q.shape[-1] != params.d:
        raise DimensionMismatchError(f"code has {q.shape[-1]} dimensions, quantizer has {params.d}")
    return q.astype(np.float64) / params.scales + params.mins


# ============================================================================
# Construction Parameter Adaptation
# ============================================================================

def adapt_connectivity(m0: int, delta: float, eta: float) -> int:
    """M_i = floor(M_0 * (1 + delta * (1 + eta)))."""
    if m0 < 2:
        raise ConfigurationError(f"M_0 must be >= 2, got {m0}")
    # The tolerance absorbs representation error in products like 16 * 1.75.
    return max(m0, int(math.floor(m0 * (1.0 + delta * (1.0 + eta)) + 1e-9)))


def adapt_ef_construction(ef0: int, delta: float, eta: float, m: Optional[int] = None) -> int:
    """
    ef_construction = round(ef0 / (1 + delta * eta)), floored at max(16, m).

    The floor never lifts the result above ef0 itself.
    """
    if ef0 < 1:
        raise ConfigurationError(f"ef_0 must be >= 1, got {ef0}")
    adapted = int(math.floor(ef0 / (1.0 + delta * eta) + 0.5))
    floor_value = max(MIN_EF_CONSTRUCTION, m or 0)
    return max(adapted, min(floor_value, ef0))


def derive_graph_params(m0: int, ef0: int, delta: float, eta: float) -> GraphParams:
    """Adapted (M, ef_construction) for a dataset with heterogeneity (delta, eta)."""
    m = adapt_connectivity(m0, delta, eta)
    ef = adapt_ef_construction(ef0, delta, eta, m)
    logger.info(f"Adapted construction parameters: M {m0} -> {m}, ef_construction {ef0} -> {ef}")
    return GraphParams(m=m, ef_construction=ef, m0=m0, ef0=ef0)
