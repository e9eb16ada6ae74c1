"""
Bench Harness
=============
Measurement library behind the ``aqr`` management command: exact ground
truth, Recall@k, single-threaded QPS and latency percentiles, parameter
sweeps, build-time comparison, kernel tier micro-benchmarks and the four
recommended recall-band presets.
"""

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .distance_kernels import KernelSet, host_tiers, kernels_for_tier, select_kernels
from .exceptions import ConfigurationError, MeasurementError
from .hnsw_graph import BuildConfig, GraphIndex, GraphMode, build
from .search_pipeline import ResultSet, SearchConfig, run_query
from .vector_store import Dataset

logger = logging.getLogger(__name__)

SWEEP_AXES = ("n_coarse", "n_rerank", "tau_gap", "tau_ratio", "m_ef", "ef_search")
_INTEGER_AXES = {"n_coarse", "n_rerank", "m_ef", "ef_search"}

QueryInput = Union[Dataset, np.ndarray]


# ============================================================================
# Presets
# ============================================================================

@dataclass(frozen=True)
class Preset:
    """One recommended parameter row for a target recall band."""
    name: str
    target_recall: Tuple[float, Optional[float]]
    n_coarse: int
    n_rerank: int
    tau_gap: float
    tau_ratio: float
    m_ef: int

    def to_config(self, k: int = 10, early_termination: bool = True, **overrides) -> SearchConfig:
        """SearchConfig carrying this row, with optional per-field overrides."""
        config = SearchConfig(
            k=k,
            n_coarse=self.n_coarse,
            m_ef=self.m_ef,
            n_rerank=self.n_rerank,
            tau_gap=self.tau_gap,
            tau_ratio=self.tau_ratio,
            early_termination=early_termination,
        )
        return replace(config, **{key: value for key, value in overrides.items() if value is not None})

    def validate(self) -> "Preset":
        self.to_config().validate()
        return self


PRESETS: Dict[str, Preset] = {
    "0.85-0.90": Preset("0.85-0.90", (0.85, 0.90), n_coarse=35, n_rerank=12, tau_gap=0.020, tau_ratio=1.015, m_ef=2),
    "0.90-0.95": Preset("0.90-0.95", (0.90, 0.95), n_coarse=45, n_rerank=16, tau_gap=0.015, tau_ratio=1.012, m_ef=2),
    "0.95-0.97": Preset("0.95-0.97", (0.95, 0.97), n_coarse=55, n_rerank=20, tau_gap=0.012, tau_ratio=1.010, m_ef=3),
    "0.97+": Preset("0.97+", (0.97, None), n_coarse=70, n_rerank=28, tau_gap=0.010, tau_ratio=1.008, m_ef=3),
}


def preset(name: str) -> Preset:
    """
    Look up a preset by its recall band.

    Raises:
        ConfigurationError: If the band is unknown
    """
    key = name.strip().replace("–", "-")
    if key not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}")
    return PRESETS[key]


# ============================================================================
# Ground Truth and Recall
# ============================================================================

def _rows(queries: QueryInput) -> np.ndarray:
    return queries.data if isinstance(queries, Dataset) else np.ascontiguousarray(queries, dtype=np.float32)


def ground_truth(dataset: Dataset, queries: QueryInput, k: int,
                 kernels: Optional[KernelSet] = None, workers: Optional[int] = None) -> np.ndarray:
    """
    Brute-force exact top-k ids per query, ties broken by id.

    Args:
        dataset: Base vectors
        queries: Query matrix
        k: Neighbors per query (<= n)
        kernels: Kernel set for the exact distance; host default when None
        workers: Thread pool size

    Returns:
        int32 matrix (n_queries, k)
    """
    if not 1 <= k <= dataset.n:
        raise ConfigurationError(f"k must lie in [1, {dataset.n}], got {k}")
    matrix = _rows(queries)
    if matrix.ndim != 2 or matrix.shape[1] != dataset.d:
        raise MeasurementError(f"queries of shape {matrix.shape} do not match d={dataset.d}")
    kernels = kernels or select_kernels()
    all_ids = np.arange(dataset.n)

    def top_k(q: np.ndarray) -> np.ndarray:
        dists = kernels.exact_many(q, dataset.data, all_ids)
        if k < dataset.n:
            threshold = np.partition(dists, k - 1)[k - 1]
            pool = np.flatnonzero(dists <= threshold)
        else:
            pool = all_ids
        order = np.lexsort((pool, dists[pool]))
        return pool[order[:k]]

    with ThreadPoolExecutor(max_workers=workers) as executor:
        rows = list(executor.map(top_k, matrix))
    return np.asarray(rows, dtype=np.int32).reshape(len(rows), k)


def _result_ids(result: Union[ResultSet, Sequence[int]]) -> List[int]:
    return result.ids if isinstance(result, ResultSet) else list(result)


def recall_at_k(results: Sequence[Union[ResultSet, Sequence[int]]], truth: np.ndarray, k: int) -> float:
    """
    Mean over queries of |returned ∩ true top-k| / k.

    Raises:
        MeasurementError: On misaligned query counts, k outside [1, truth width], or no queries
    """
    truth = np.asarray(truth)
    if len(results) == 0:
        raise MeasurementError("no results to score")
    if truth.ndim != 2 or truth.shape[0] != len(results):
        raise MeasurementError(f"{len(results)} results but truth has shape {truth.shape}")
    if not 1 <= k <= truth.shape[1]:
        raise MeasurementError(f"k must lie in [1, {truth.shape[1]}], got {k}")
    hits = 0
    for result, row in zip(results, truth):
        hits += len(set(_result_ids(result)[:k]) & set(row[:k].tolist()))
    return hits / (k * len(results))


# ============================================================================
# Measurement
# ============================================================================

@dataclass
class BenchReport:
    """One measured configuration."""
    mode: str
    dataset: str
    n: int
    d: int
    build_seconds: float
    n_queries: int
    qps: float
    recall_at_k: Optional[float]
    latency_p50: float
    latency_p90: float
    latency_p99: float
    mean_exact_computed: float
    mean_coarse_evaluated: float
    early_termination_rate: float
    search_bytes: int
    config: Dict[str, object] = field(default_factory=dict)
    latencies_us: List[float] = field(default_factory=list, repr=False)

    def row(self) -> Dict[str, object]:
        """Flat CSV row; the config snapshot is spread into ``cfg_*`` columns."""
        data = asdict(self)
        data.pop("latencies_us")
        config = data.pop("config")
        data.update({f"cfg_{key}": value for key, value in config.items()})
        return data


def nearest_rank(sample: Sequence[float], percent: float) -> float:
    """Nearest-rank percentile of a non-empty sample."""
    return float(np.percentile(np.asarray(sample, dtype=np.float64), percent, method="inverted_cdf"))


def measure(
    index: GraphIndex,
    queries: QueryInput,
    config: Optional[SearchConfig] = None,
    warmup: int = 100,
    repeats: int = 1,
    truth: Optional[np.ndarray] = None,
    dataset_name: str = "",
) -> BenchReport:
    """
    Single-threaded timed query loop.

    Args:
        index: Index under test
        queries: Query matrix
        config: Search parameters
        warmup: Unmeasured queries run first (cycling through the set)
        repeats: Timed passes; QPS is the best pass, latencies are pooled
        truth: Optional ground-truth ids for Recall@k
        dataset_name: Label carried into the report

    Returns:
        BenchReport with latencies in microseconds

    Raises:
        MeasurementError: If there are no queries or repeats < 1
    """
    config = replace(config or SearchConfig()).validate()
    matrix = _rows(queries)
    n_queries = matrix.shape[0] if matrix.ndim == 2 else 0
    if n_queries == 0:
        raise MeasurementError("cannot measure zero queries")
    if repeats < 1 or warmup < 0:
        raise MeasurementError(f"need repeats >= 1 and warmup >= 0, got {repeats}, {warmup}")

    for i in range(warmup):
        run_query(index, matrix[i % n_queries], config)

    best_wall = math.inf
    latencies: List[float] = []
    results: List[ResultSet] = []
    for _ in range(repeats):
        results = []
        started = time.perf_counter()
        for q in matrix:
            t0 = time.perf_counter()
            results.append(run_query(index, q, config))
            latencies.append((time.perf_counter() - t0) * 1e6)
        best_wall = min(best_wall, time.perf_counter() - started)

    recall = recall_at_k(results, truth, config.k) if truth is not None else None
    report = BenchReport(
        mode=(config.mode or index.mode).value,
        dataset=dataset_name,
        n=index.n,
        d=index.d,
        build_seconds=index.build_seconds,
        n_queries=n_queries,
        qps=n_queries / best_wall if best_wall > 0 else math.inf,
        recall_at_k=recall,
        latency_p50=nearest_rank(latencies, 50),
        latency_p90=nearest_rank(latencies, 90),
        latency_p99=nearest_rank(latencies, 99),
        mean_exact_computed=float(np.mean([r.stats.exact_computed for r in results])),
        mean_coarse_evaluated=float(np.mean([r.stats.coarse_evaluated for r in results])),
        early_termination_rate=float(np.mean([r.stats.early_terminated for r in results])),
        search_bytes=int(index.memory_footprint()["search_bytes"]),
        config=config.snapshot(),
        latencies_us=latencies,
    )
    recall_text = f"{recall:.4f}" if recall is not None else "n/a"
    logger.info(
        f"Measured {report.mode}: qps={report.qps:.1f} recall@{config.k}={recall_text} "
        f"p50={report.latency_p50:.1f}us p99={report.latency_p99:.1f}us"
    )
    return report


def sweep(
    index: Union[GraphIndex, Tuple[Dataset, BuildConfig]],
    queries: QueryInput,
    truth: Optional[np.ndarray],
    axis: str,
    values: Iterable[float],
    base_config: Optional[SearchConfig] = None,
    warmup: int = 0,
    repeats: int = 1,
    dataset_name: str = "",
) -> List[BenchReport]:
    """
    One BenchReport per value of a single search parameter.

    Args:
        index: Built index, or a (dataset, build config) pair built once here
        queries: Query matrix
        truth: Ground-truth ids (recall column left empty when None)
        axis: Parameter to vary, one of SWEEP_AXES
        values: Axis values; unsorted input is sorted with a warning

    Raises:
        ConfigurationError: On an unknown axis or no values
    """
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"unknown sweep axis {axis!r}; expected one of {', '.join(SWEEP_AXES)}")
    values = list(values)
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    if values != sorted(values):
        logger.warning(f"Sweep values for {axis} were not sorted; sorting them")
        values = sorted(values)
    if not isinstance(index, GraphIndex):
        dataset, build_config = index
        index = build(dataset, build_config)

    base_config = base_config or SearchConfig()
    reports = []
    for value in values:
        value = int(value) if axis in _INTEGER_AXES else float(value)
        config = replace(base_config, **{axis: value})
        reports.append(measure(index, queries, config, warmup=warmup, repeats=repeats,
                               truth=truth, dataset_name=dataset_name))
    return reports


# ============================================================================
# Build Comparison and Kernel Micro-benchmarks
# ============================================================================

@dataclass
class BuildReport:
    mode: str
    n: int
    d: int
    build_seconds: float
    m: int
    ef_construction: int
    delta: Optional[float]
    eta: Optional[float]
    speedup_vs_baseline: Optional[float] = None

    def row(self) -> Dict[str, object]:
        return asdict(self)


def compare_builds(dataset: Dataset, config: Optional[BuildConfig] = None,
                   modes: Sequence[Union[GraphMode, str]] = (GraphMode.BASELINE, GraphMode.SCALAR_QUANT, GraphMode.AQR),
                   ) -> List[BuildReport]:
    """Build the same dataset in each mode with identical M_0/ef_0 and report timings."""
    config = config or BuildConfig()
    modes = [GraphMode.parse(mode) for mode in modes]
    reports = []
    for mode in modes:
        index = build(dataset, replace(config, mode=mode))
        profile = index.profile
        reports.append(BuildReport(
            mode=mode.value,
            n=index.n,
            d=index.d,
            build_seconds=index.build_seconds,
            m=index.graph_params.m,
            ef_construction=index.graph_params.ef_construction,
            delta=profile.delta if profile is not None else None,
            eta=profile.eta if profile is not None else None,
        ))

    baseline = next((r for r in reports if r.mode == GraphMode.BASELINE.value), None)
    if baseline is not None:
        for report in reports:
            report.speedup_vs_baseline = baseline.build_seconds / report.build_seconds
    return reports


@dataclass
class KernelBenchRow:
    tier: str
    kernel: str
    d: int
    pairs: int
    ns_per_pair: float
    speedup_vs_scalar: float = 1.0

    def row(self) -> Dict[str, object]:
        return asdict(self)


def _time_batch(fn, *args, rounds: int = 3) -> float:
    fn(*args)
    best = math.inf
    for _ in range(rounds):
        started = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - started)
    return best


def kernel_benchmark(d: int = 128, pairs: int = 10000, seed: int = 0) -> List[KernelBenchRow]:
    """
    Time the batched integer and float kernels of every tier the host supports.

    The first call per tier compiles it; timings are best-of-three after that.
    """
    if d < 1 or pairs < 1:
        raise ConfigurationError(f"need d >= 1 and pairs >= 1, got d={d}, pairs={pairs}")
    rng = np.random.default_rng(seed)
    codes = rng.integers(0, 256, size=(pairs, d), dtype=np.uint8)
    qhat = rng.integers(0, 256, size=d, dtype=np.uint8)
    raw = rng.standard_normal((pairs, d)).astype(np.float32)
    q = rng.standard_normal(d).astype(np.float32)
    ids = np.arange(pairs, dtype=np.int64)

    rows = []
    for tier in host_tiers():
        kernels = kernels_for_tier(tier)
        quantized = _time_batch(kernels.quantized_sum_many, qhat, codes, ids)
        exact = _time_batch(kernels.exact_many, q, raw, ids)
        rows.append(KernelBenchRow(tier.value, "quantized", d, pairs, quantized * 1e9 / pairs))
        rows.append(KernelBenchRow(tier.value, "exact", d, pairs, exact * 1e9 / pairs))

    scalar = {row.kernel: row.ns_per_pair for row in rows if row.tier == "scalar"}
    for row in rows:
        row.speedup_vs_scalar = scalar[row.kernel] / row.ns_per_pair if row.ns_per_pair > 0 else math.inf
    return rows


def latency_histogram(report: BenchReport, bins: int = 50) -> Tuple[np.ndarray, np.ndarray]:
    """(edges, counts) of the pooled per-query latencies."""
    if not report.latencies_us:
        raise MeasurementError("report carries no latencies")
    counts, edges = np.histogram(np.asarray(report.latencies_us), bins=bins)
    return edges, counts


# ============================================================================
# CSV
# ============================================================================

def write_csv(rows: Sequence[Union[Dict[str, object], BenchReport, BuildReport, KernelBenchRow]],
              path: Union[str, Path]) -> None:
    """Write rows with a header; column order follows the first row."""
    rows = [r if isinstance(r, dict) else r.row() for r in rows]
    if not rows:
        raise MeasurementError("no rows to write")
    fieldnames = list(rows[0])
    for row in rows[1:]:
        fieldnames.extend(key for key in row if key not in fieldnames)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: "" if value is None else value for key, value in row.items()})
    logger.info(f"Wrote {len(rows)} rows to {path}")


def _parse_cell(text: str) -> object:
    if text == "":
        return None
    if text in ("True", "False"):
        return text == "True"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def read_csv(path: Union[str, Path]) -> List[Dict[str, object]]:
    """Parse a CSV written by ``write_csv`` back into typed rows."""
    with Path(path).open(newline="") as f:
        return [{key: _parse_cell(value) for key, value in row.items()} for row in csv.DictReader(f)]


def write_latency_csv(report: BenchReport, path: Union[str, Path], bins: int = 50) -> None:
    edges, counts = latency_histogram(report, bins)
    write_csv([
        {"bin_low_us": float(edges[i]), "bin_high_us": float(edges[i + 1]), "count": int(counts[i])}
        for i in range(len(counts))
    ], path)
