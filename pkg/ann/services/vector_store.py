"""
Vector Store
============
Raw and quantized vector containers, fvecs/ivecs/bvecs file IO, and
synthetic dataset generation for tests and benchmarks.

File layout (little-endian throughout):
    fvecs: repeated (int32 d, d x float32)
    ivecs: repeated (int32 K, K x int32)
    bvecs: repeated (int32 d, d x uint8)
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .exceptions import DatasetFormatError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


# ============================================================================
# Type Definitions
# ============================================================================

def _freeze(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class Dataset:
    """n x d matrix of finite float32 vectors, row-major and read-only."""

    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise DatasetFormatError(f"dataset must be 2-dimensional, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise DatasetFormatError(f"dataset must have n >= 1 and d >= 1, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise DatasetFormatError("dataset contains NaN or Inf values")
        if data is self.data:
            data = data.copy()
        object.__setattr__(self, "data", _freeze(data))

    @classmethod
    def adopt(cls, data: np.ndarray) -> "Dataset":
        """Take ownership of an already-validated float32 matrix without copying."""
        instance = cls.__new__(cls)
        object.__setattr__(instance, "data", _freeze(np.ascontiguousarray(data, dtype=np.float32)))
        return instance

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    @property
    def nbytes(self) -> int:
        return self.data.nbytes

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class QuantizedSet:
    """n x d matrix of 8-bit codes; occupies exactly n*d bytes."""

    codes: np.ndarray

    def __post_init__(self):
        codes = self.codes
        if codes.dtype != np.uint8:
            raise DatasetFormatError(f"codes must be uint8, got {codes.dtype}")
        if codes.ndim != 2:
            raise DatasetFormatError(f"codes must be 2-dimensional, got shape {codes.shape}")
        codes = np.ascontiguousarray(codes)
        if codes is self.codes:
            codes = codes.copy()
        object.__setattr__(self, "codes", _freeze(codes))

    @classmethod
    def adopt(cls, codes: np.ndarray) -> "QuantizedSet":
        """Take ownership of a uint8 code matrix without copying."""
        instance = cls.__new__(cls)
        object.__setattr__(instance, "codes", _freeze(np.ascontiguousarray(codes, dtype=np.uint8)))
        return instance

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def d(self) -> int:
        return self.codes.shape[1]

    @property
    def nbytes(self) -> int:
        return self.codes.nbytes

    def __len__(self) -> int:
        return self.n


# ============================================================================
# File IO
# ============================================================================

def _read_records(path: PathLike, payload_dtype: str) -> np.ndarray:
    """
    Read a length-prefixed vector file into an (n, d) array.

    Args:
        path: File to read
        payload_dtype: Little-endian numpy dtype of the payload ('<f4', '<i4', 'u1')

    Returns:
        Array of shape (n, d) in native byte order; shape (0, 0) for an empty file

    Raises:
        DatasetFormatError: On d <= 0, inconsistent dimensions or truncation
    """
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0:
        return np.empty((0, 0), dtype=np.dtype(payload_dtype).newbyteorder("="))
    if raw.size < 4:
        raise DatasetFormatError(f"{path}: truncated file (no complete header)")

    item_size = np.dtype(payload_dtype).itemsize
    d = int(raw[:4].view("<i4")[0])
    if d <= 0:
        raise DatasetFormatError(f"{path}: invalid dimension {d} in first record")

    record_bytes = 4 + d * item_size
    if raw.size % record_bytes != 0:
        _locate_framing_error(path, raw, d, record_bytes)

    rows = raw.reshape(-1, record_bytes)
    headers = rows[:, :4].copy().view("<i4").ravel()
    bad = np.flatnonzero(headers != d)
    if bad.size:
        raise DatasetFormatError(
            f"{path}: inconsistent dimension at record {int(bad[0])} "
            f"({int(headers[bad[0]])} != {d})"
        )
    payload = rows[:, 4:].copy().view(payload_dtype).reshape(-1, d)
    return payload.astype(np.dtype(payload_dtype).newbyteorder("="))


def _locate_framing_error(path: PathLike, raw: np.ndarray, d: int, record_bytes: int) -> None:
    """Walk record headers to report the first framing problem."""
    offset = 0
    record = 0
    while offset < raw.size:
        if offset + 4 > raw.size:
            break
        header = int(raw[offset:offset + 4].view("<i4")[0])
        if header != d:
            raise DatasetFormatError(
                f"{path}: inconsistent dimension at record {record} ({header} != {d})"
            )
        offset += record_bytes
        record += 1
    raise DatasetFormatError(f"{path}: truncated file after record {record - 1}")


def load_fvecs(path: PathLike) -> Dataset:
    """
    Load an fvecs file.

    Args:
        path: Path to the .fvecs file

    Returns:
        Dataset with every record; d taken from the first record

    Raises:
        DatasetFormatError: Empty, truncated, inconsistent or non-finite file
    """
    data = _read_records(path, "<f4")
    if data.shape[0] == 0:
        raise DatasetFormatError(f"{path}: empty file")
    if not np.isfinite(data).all():
        raise DatasetFormatError(f"{path}: NaN or Inf values are not admitted")
    logger.info(f"Loaded {data.shape[0]} vectors of dimension {data.shape[1]} from {path}")
    return Dataset(data)


def load_bvecs(path: PathLike) -> Dataset:
    """Load a bvecs file, widening uint8 components to float32."""
    data = _read_records(path, "u1")
    if data.shape[0] == 0:
        raise DatasetFormatError(f"{path}: empty file")
    logger.info(f"Loaded {data.shape[0]} byte vectors of dimension {data.shape[1]} from {path}")
    return Dataset(data.astype(np.float32))


def load_ivecs(path: PathLike) -> np.ndarray:
    """
    Load an ivecs file (ground-truth neighbor ids).

    Args:
        path: Path to the .ivecs file

    Returns:
        int32 matrix of shape (n_q, K); (0, 0) for an empty file
    """
    ids = _read_records(path, "<i4")
    return ids.astype(np.int32, copy=False)


def _write_records(path: PathLike, matrix: np.ndarray, payload_dtype: str) -> None:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise DatasetFormatError(f"expected a 2-dimensional matrix, got shape {matrix.shape}")
    n, d = matrix.shape
    if n and d <= 0:
        raise DatasetFormatError("cannot write records of dimension 0")
    record = np.dtype([("dim", "<i4"), ("vec", payload_dtype, (d,))])
    out = np.empty(n, dtype=record)
    out["dim"] = d
    out["vec"] = matrix
    out.tofile(path)


def write_fvecs(path: PathLike, data: Union[Dataset, np.ndarray]) -> None:
    """Write vectors as little-endian fvecs."""
    matrix = data.data if isinstance(data, Dataset) else np.asarray(data, dtype=np.float32)
    _write_records(path, matrix, "<f4")


def write_ivecs(path: PathLike, ids: np.ndarray) -> None:
    """Write an id matrix as little-endian ivecs."""
    _write_records(path, np.asarray(ids, dtype=np.int32), "<i4")


# ============================================================================
# Synthetic Data
# ============================================================================

DEFAULT_INTRINSIC_DIM = 16


def gen_clustered(
    n: int,
    d: int,
    n_clusters: int,
    spread_ratio: float,
    seed: int,
    center_box: float = 5.0,
    intrinsic_dim: Optional[int] = DEFAULT_INTRINSIC_DIM,
    noise_floor: float = 0.05,
) -> Dataset:
    """
    Generate Gaussian clusters whose standard deviations span ``spread_ratio``.

    Cluster c varies with std-dev sigma_c along its own random orthonormal
    ``intrinsic_dim``-dimensional subspace, plus isotropic noise of
    ``noise_floor * sigma_c`` on every coordinate. With intrinsic_dim >= d
    each cluster is an isotropic Gaussian.

    Args:
        n: Number of vectors
        d: Dimensionality
        n_clusters: Number of clusters (1 <= n_clusters <= n)
        spread_ratio: Ratio between the widest and the tightest cluster std-dev
        seed: Generator seed; output is a pure function of all arguments
        center_box: Cluster centers are drawn uniformly from [-center_box, center_box]^d
        intrinsic_dim: Subspace dimension per cluster; None uses all d dimensions
        noise_floor: Off-subspace std-dev relative to the cluster's own

    Returns:
        Dataset of n rows, shuffled so clusters interleave
    """
    if d < 1:
        raise DatasetFormatError(f"d must be >= 1, got {d}")
    if not 1 <= n_clusters <= n:
        raise DatasetFormatError(f"need n >= n_clusters >= 1, got n={n}, n_clusters={n_clusters}")
    if spread_ratio <= 0:
        raise DatasetFormatError(f"spread_ratio must be positive, got {spread_ratio}")
    if intrinsic_dim is not None and intrinsic_dim < 1:
        raise DatasetFormatError(f"intrinsic_dim must be >= 1, got {intrinsic_dim}")
    if noise_floor < 0:
        raise DatasetFormatError(f"noise_floor must be >= 0, got {noise_floor}")

    rng = np.random.default_rng(seed)
    k = d if intrinsic_dim is None else min(d, intrinsic_dim)
    centers = rng.uniform(-center_box, center_box, size=(n_clusters, d))
    sigmas = np.geomspace(1.0, spread_ratio, num=n_clusters) if n_clusters > 1 else np.ones(1)

    counts = np.full(n_clusters, n // n_clusters)
    counts[: n % n_clusters] += 1

    blocks = []
    for c in range(n_clusters):
        basis, _ = np.linalg.qr(rng.standard_normal((d, k)))
        spread = rng.standard_normal((counts[c], k)) @ basis.T
        floor = rng.standard_normal((counts[c], d)) * noise_floor
        blocks.append(centers[c] + (spread + floor) * sigmas[c])
    points = np.concatenate(blocks)[rng.permutation(n)]
    return Dataset(points.astype(np.float32))


def split_holdout(dataset: Dataset, n_queries: int) -> Tuple[Dataset, Dataset]:
    """
    Split off the last ``n_queries`` rows as queries drawn from the same distribution.

    Returns:
        (base rows, held-out rows)
    """
    if not 1 <= n_queries < dataset.n:
        raise DatasetFormatError(f"need 1 <= n_queries < {dataset.n}, got {n_queries}")
    cut = dataset.n - n_queries
    return Dataset(dataset.data[:cut]), Dataset(dataset.data[cut:])


def gen_queries(dataset: Dataset, n_queries: int, noise: float, seed: int) -> Dataset:
    """
    Draw queries as dataset rows perturbed by isotropic Gaussian noise.

    Args:
        dataset: Source dataset
        n_queries: Number of queries
        noise: Std-dev of the perturbation, relative to the dataset's mean per-dimension std-dev
        seed: Generator seed
    """
    if n_queries < 1:
        raise DatasetFormatError(f"n_queries must be >= 1, got {n_queries}")
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, dataset.n, size=n_queries)
    scale = float(dataset.data.std(axis=0).mean()) * noise
    queries = dataset.data[rows] + rng.standard_normal((n_queries, dataset.d)) * scale
    return Dataset(queries.astype(np.float32))


def repeat_queries(queries: Dataset, target: int) -> Dataset:
    """Tile a query set until it holds ``target`` rows."""
    if target < 1:
        raise DatasetFormatError(f"target must be >= 1, got {target}")
    reps = -(-target // queries.n)
    return Dataset(np.tile(queries.data, (reps, 1))[:target])
