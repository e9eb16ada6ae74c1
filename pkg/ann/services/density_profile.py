"""
Density Profile
===============
Characterizes how unevenly a dataset is populated before quantization:
per-point local density from k-nearest-neighbor analysis, the global
heterogeneity delta, per-dimension density weights and their coefficient
of variation eta.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit, prange

from .exceptions import InsufficientPointsError, NumericalDomainError
from .vector_store import Dataset

logger = logging.getLogger(__name__)

DEFAULT_K = 10
DEFAULT_EPSILON = 1e-6
DEFAULT_SAMPLE_THRESHOLD = 10000
DEFAULT_SAMPLE_CAP = 5000
WEIGHT_FLOOR = 1e-12


# ============================================================================
# Type Definitions
# ============================================================================

@dataclass(frozen=True)
class DensityProfile:
    """Density statistics of one dataset."""

    rho: np.ndarray
    delta: float
    weights: np.ndarray
    eta: float
    sigma_w: float
    mean_w: float
    sample_size: int
    mean_rho: float
    k_density: int
    epsilon: float
    sampled_ids: Optional[np.ndarray] = None

    def summary(self) -> dict:
        """Scalar fields only, for logs and reports."""
        return {
            "delta": self.delta,
            "eta": self.eta,
            "sigma_w": self.sigma_w,
            "mean_w": self.mean_w,
            "sample_size": self.sample_size,
            "mean_rho": self.mean_rho,
            "k_density": self.k_density,
            "epsilon": self.epsilon,
        }


# ============================================================================
# kNN Kernels
# ============================================================================

@njit(parallel=True, cache=True)
def _mean_knn_sqdist(points, k):
    # Squared distances accumulate in float64; the point itself is excluded.
    n, d = points.shape
    out = np.empty(n, dtype=np.float64)
    for i in prange(n):
        dists = np.empty(n, dtype=np.float64)
        for j in range(n):
            acc = 0.0
            for c in range(d):
                diff = np.float64(points[i, c]) - np.float64(points[j, c])
                acc += diff * diff
            dists[j] = acc
        dists[i] = np.inf
        nearest = np.partition(dists, k - 1)[:k]
        out[i] = nearest.sum() / k
    return out


def _check_k(n: int, k: int) -> None:
    if k < 1:
        raise InsufficientPointsError(f"k must be >= 1, got {k}")
    if k >= n:
        raise InsufficientPointsError(f"insufficient points: k={k} requires at least {k + 1} points, got {n}")


# ============================================================================
# Operations
# ============================================================================

def local_density(point_index: int, dataset: Dataset, k: int = DEFAULT_K,
                  epsilon: float = DEFAULT_EPSILON) -> float:
    """
    Local density of one point: 1 / (mean squared distance to its k nearest neighbors + epsilon).

    Args:
        point_index: Row of the point in the dataset
        dataset: Dataset holding the point
        k: Number of neighbors, excluding the point itself
        epsilon: Stability constant

    Returns:
        Density rho > 0

    Raises:
        InsufficientPointsError: If k >= n
    """
    _check_k(dataset.n, k)
    points = dataset.data.astype(np.float64)
    sq = ((points - points[point_index]) ** 2).sum(axis=1)
    sq[point_index] = np.inf
    nearest = np.partition(sq, k - 1)[:k]
    return float(1.0 / (nearest.mean() + epsilon))


def densities(points: np.ndarray, k: int, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Exact densities for every row of ``points``, neighbors searched among the same rows."""
    _check_k(points.shape[0], k)
    mean_sq = _mean_knn_sqdist(np.ascontiguousarray(points, dtype=np.float32), k)
    return 1.0 / (mean_sq + epsilon)


def compute_delta(rho: Sequence[float], epsilon: float = DEFAULT_EPSILON) -> float:
    """
    Global heterogeneity (max(rho) - min(rho)) / (max(rho) + epsilon).

    Raises:
        NumericalDomainError: If rho is empty
    """
    rho = np.asarray(rho, dtype=np.float64)
    if rho.size == 0:
        raise NumericalDomainError("cannot compute delta of an empty density list")
    hi = float(rho.max())
    lo = float(rho.min())
    return (hi - lo) / (hi + epsilon)


def compute_weights(dataset: Dataset, rho: Sequence[float], literal: bool = False) -> np.ndarray:
    """
    Per-dimension density weights.

    The default is the density-weighted variance of each dimension, floored at
    1e-12 and normalized to mean 1. ``literal=True`` reproduces the
    dimension-independent form w_j = mean(rho).

    Args:
        dataset: Dataset the densities belong to
        rho: Densities aligned with dataset rows
        literal: Use the dimension-independent formula

    Returns:
        float64 array of length d, all entries positive
    """
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape[0] != dataset.n:
        raise NumericalDomainError(
            f"density list has {rho.shape[0]} entries for {dataset.n} rows"
        )
    if literal:
        return np.full(dataset.d, rho.mean())

    total = rho.sum()
    points = dataset.data.astype(np.float64)
    mu = rho @ points / total
    variance = rho @ ((points - mu) ** 2) / total
    if not (variance > 0).any():
        logger.warning("All per-dimension weighted variances are zero; using uniform weights")
        return np.ones(dataset.d)
    variance = np.maximum(variance, WEIGHT_FLOOR)
    return variance / variance.mean()


def compute_eta(weights: Sequence[float]) -> float:
    """
    Coefficient of variation of the weights (population std-dev / mean).

    Raises:
        NumericalDomainError: If weights are empty or their mean is not positive
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0:
        raise NumericalDomainError("cannot compute eta of an empty weight list")
    mean_w = float(w.mean())
    if mean_w <= 0:
        raise NumericalDomainError(f"weight mean must be positive, got {mean_w}")
    return float(w.std() / mean_w)


def build_profile(
    dataset: Dataset,
    k: int = DEFAULT_K,
    sample_threshold: int = DEFAULT_SAMPLE_THRESHOLD,
    sample_cap: int = DEFAULT_SAMPLE_CAP,
    seed: int = 0,
    epsilon: float = DEFAULT_EPSILON,
    literal_weights: bool = False,
) -> DensityProfile:
    """
    Compute the full density profile of a dataset.

    Datasets above ``sample_threshold`` points get exact densities for a uniform
    sample of min(sample_cap, n) points (neighbors searched within the sample);
    every other point carries the sample mean.

    Args:
        dataset: Dataset to characterize
        k: Neighbor count for local density
        sample_threshold: n above which sampling kicks in
        sample_cap: Maximum sample size
        seed: Seed for the sample draw
        epsilon: Stability constant
        literal_weights: Use the dimension-independent weight formula

    Returns:
        DensityProfile

    Raises:
        InsufficientPointsError: If n <= k, or the sample is too small for k
    """
    n = dataset.n
    _check_k(n, k)

    sampled_ids = None
    if n <= sample_threshold:
        rho = densities(dataset.data, k, epsilon)
        sample_size = n
        mean_rho = float(rho.mean())
    else:
        sample_size = min(sample_cap, n)
        rng = np.random.default_rng(seed)
        sampled_ids = np.sort(rng.choice(n, size=sample_size, replace=False))
        sample_rho = densities(dataset.data[sampled_ids], k, epsilon)
        mean_rho = float(sample_rho.mean())
        rho = np.full(n, mean_rho)
        rho[sampled_ids] = sample_rho

    delta = compute_delta(rho, epsilon)
    weights = compute_weights(dataset, rho, literal=literal_weights)
    eta = compute_eta(weights)

    rho.flags.writeable = False
    weights.flags.writeable = False
    profile = DensityProfile(
        rho=rho,
        delta=delta,
        weights=weights,
        eta=eta,
        sigma_w=float(weights.std()),
        mean_w=float(weights.mean()),
        sample_size=sample_size,
        mean_rho=mean_rho,
        k_density=k,
        epsilon=epsilon,
        sampled_ids=sampled_ids,
    )
    logger.info(
        f"Density profile: n={n} sample={sample_size} k={k} "
        f"delta={delta:.4f} eta={eta:.4f}"
    )
    return profile
