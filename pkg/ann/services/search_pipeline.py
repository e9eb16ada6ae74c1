"""
Search Pipeline
===============
Three-stage query path over a GraphIndex:

    1. coarse search on 8-bit codes (HNSW beam, quantized distance)
    2. asymmetric refinement (float query vs. decoded candidates)
    3. exact reranking on retained raw vectors, capped at k when the
       asymmetric k / k+1 boundary is already well separated

Distances are squared Euclidean at every stage; ties are broken by id.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .adaptive_quantizer import QuantizationParams, encode
from .distance_kernels import KernelSet
from .exceptions import ConfigurationError, DimensionMismatchError, EmptyIndexError
from .graph_kernels import STAGE_ASYMMETRIC, STAGE_EXACT
from .hnsw_graph import GraphIndex, GraphMode, TraversalStats
from .validation_module import FieldType, PayloadValidator, SchemaBuilder, require_valid

logger = logging.getLogger(__name__)


# ============================================================================
# Type Definitions
# ============================================================================

class StageTag(Enum):
    """Distance function that produced a candidate's score."""
    QUANTIZED = "quantized"
    ASYMMETRIC = "asymmetric"
    EXACT = "exact"


def _search_config_schema():
    return (SchemaBuilder()
        .add_field("k", field_type=FieldType.INTEGER, minimum=1)
        .add_field("n_coarse", field_type=FieldType.INTEGER, minimum=1)
        .add_field("m_ef", field_type=FieldType.INTEGER, minimum=1)
        .add_field("n_rerank", field_type=FieldType.INTEGER, minimum=0)
        .add_field("tau_gap", field_type=FieldType.FLOAT, minimum=0)
        .add_field("tau_ratio", field_type=FieldType.FLOAT, minimum=1)
        .add_field("early_termination", field_type=FieldType.BOOLEAN)
        .add_field("ef_search", required=False, field_type=FieldType.INTEGER, minimum=1)
        .build()
    )


@dataclass
class SearchConfig:
    """Query-time parameters; defaults are the 0.95-0.97 preset."""
    k: int = 10
    n_coarse: int = 55
    m_ef: int = 3
    n_rerank: int = 20
    tau_gap: float = 0.012
    tau_ratio: float = 1.010
    early_termination: bool = True
    mode: Optional[Union[GraphMode, str]] = None
    ef_search: Optional[int] = None

    @property
    def beam_width(self) -> int:
        """Layer-0 beam: ef_search when set, else N_c * m_ef; never below k."""
        ef = self.ef_search if self.ef_search is not None else self.n_coarse * self.m_ef
        return max(ef, self.k)

    def validate(self) -> "SearchConfig":
        if self.mode is not None:
            self.mode = GraphMode.parse(self.mode)
        require_valid(PayloadValidator(_search_config_schema()).validate(self), "search config")
        if self.n_coarse < self.k:
            raise ConfigurationError(f"n_coarse ({self.n_coarse}) must be >= k ({self.k})")
        if self.n_rerank > self.n_coarse:
            raise ConfigurationError(f"n_rerank ({self.n_rerank}) must be <= n_coarse ({self.n_coarse})")
        return self

    def snapshot(self) -> Dict[str, object]:
        data = asdict(self)
        data["mode"] = self.mode.value if isinstance(self.mode, GraphMode) else self.mode
        return data


@dataclass(frozen=True)
class Candidate:
    id: int
    distance: float
    stage: StageTag

    def to_dict(self) -> dict:
        return {"id": self.id, "distance": self.distance, "stage": self.stage.value}


@dataclass
class SearchStats:
    """Per-query work counters."""
    coarse_evaluated: int = 0
    asymmetric_computed: int = 0
    exact_computed: int = 0
    early_terminated: bool = False
    short_result: bool = False


@dataclass
class ResultSet:
    results: List[Candidate]
    stats: SearchStats = field(default_factory=SearchStats)

    @property
    def ids(self) -> List[int]:
        return [c.id for c in self.results]

    @property
    def distances(self) -> List[float]:
        return [c.distance for c in self.results]

    def to_dict(self) -> dict:
        return {
            "results": [c.to_dict() for c in self.results],
            "stats": asdict(self.stats),
        }


@dataclass(frozen=True)
class TerminationDecision:
    terminate: bool
    gap: Optional[float] = None
    ratio: Optional[float] = None


def _sorted(candidates: Sequence[Candidate]) -> List[Candidate]:
    return sorted(candidates, key=lambda c: (c.distance, c.id))


# ============================================================================
# Stages
# ============================================================================

def quantize_query(q: np.ndarray, params: QuantizationParams,
                   kernels: Optional[KernelSet] = None) -> np.ndarray:
    """Encode a float query with the index's trained quantizer."""
    q = np.asarray(q)
    if q.shape != (params.d,):
        raise DimensionMismatchError(f"query has shape {q.shape}, index has d={params.d}")
    if kernels is not None:
        return kernels.encode_query(q, params)
    return encode(q, params)


def coarse_search(index: GraphIndex, qhat: np.ndarray, config: SearchConfig,
                  stats: Optional[SearchStats] = None) -> List[Candidate]:
    """
    Stage 1: HNSW search over codes with beam max(N_c * m_ef, k).

    Returns:
        Up to N_c candidates scored with d^q = s_dist * sum((qhat - xhat)^2)
    """
    if index.n == 0 or index.entry_point is None:
        raise EmptyIndexError("cannot search an empty index")
    traversal = TraversalStats()
    found = index.knn_search(qhat, config.beam_width, traversal)
    if stats is not None:
        stats.coarse_evaluated += traversal.evaluations
    s_dist = index.quant_params.s_dist
    return [Candidate(nid, s_dist * float(total), StageTag.QUANTIZED)
            for total, nid in found[: config.n_coarse]]


def asymmetric_refine(index: GraphIndex, q: np.ndarray, coarse: Sequence[Candidate],
                      stats: Optional[SearchStats] = None) -> List[Candidate]:
    """
    Stage 2: rescore every coarse candidate against its decoded vector.

    Never drops candidates; result is sorted by (d^a, id).
    """
    if not coarse:
        return []
    ids = [c.id for c in coarse]
    params = index.quant_params
    dists = index.kernels.asym_many(q, index.codes.codes, ids, params.mins, params.scales)
    if stats is not None:
        stats.asymmetric_computed += len(ids)
    return _sorted([Candidate(nid, float(dist), StageTag.ASYMMETRIC) for nid, dist in zip(ids, dists)])


def early_termination_check(refined: Sequence[Candidate], config: SearchConfig,
                            epsilon: float = 1e-6) -> TerminationDecision:
    """
    Decide whether exact reranking can stop at k.

    gap = (d_{k+1} - d_k) / (d_k + eps), ratio = d_{k+1} / (d_k + eps);
    terminate iff gap > tau_gap or ratio > tau_ratio. Only evaluated when
    termination is enabled and more than k candidates exist.
    """
    k = config.k
    if not config.early_termination or len(refined) <= k:
        return TerminationDecision(terminate=False)
    d_k = refined[k - 1].distance
    d_next = refined[k].distance
    gap = (d_next - d_k) / (d_k + epsilon)
    ratio = d_next / (d_k + epsilon)
    return TerminationDecision(terminate=gap > config.tau_gap or ratio > config.tau_ratio,
                               gap=gap, ratio=ratio)


def exact_rerank(index: GraphIndex, q: np.ndarray, refined: Sequence[Candidate], depth: int,
                 stats: Optional[SearchStats] = None) -> List[Candidate]:
    """Stage 3: exact distances for the first ``depth`` refined candidates."""
    if depth < 0 or depth > len(refined):
        raise ValueError(f"rerank depth {depth} outside [0, {len(refined)}]")
    if depth == 0:
        return []
    ids = [c.id for c in refined[:depth]]
    dists = index.kernels.exact_many(q, index.raw.data, ids)
    if stats is not None:
        stats.exact_computed += len(ids)
    return _sorted([Candidate(nid, float(dist), StageTag.EXACT) for nid, dist in zip(ids, dists)])


def assemble(exact: Sequence[Candidate], refined: Sequence[Candidate], k: int,
             stats: Optional[SearchStats] = None) -> ResultSet:
    """
    Merge exact scores over asymmetric ones and keep the first k by (distance, id).

    Fewer than k candidates yields every candidate with ``short_result`` set.
    """
    stats = stats if stats is not None else SearchStats()
    merged: Dict[int, Candidate] = {c.id: c for c in refined}
    merged.update((c.id, c) for c in exact)
    results = _sorted(merged.values())[:k]
    stats.short_result = len(results) < k
    return ResultSet(results=results, stats=stats)


# ============================================================================
# Entry Points
# ============================================================================

def _prepare_query(index: GraphIndex, query: np.ndarray) -> np.ndarray:
    q = np.ascontiguousarray(query, dtype=np.float32)
    if q.shape != (index.d,):
        raise DimensionMismatchError(f"query has shape {q.shape}, index has d={index.d}")
    if not np.isfinite(q).all():
        raise DimensionMismatchError("query contains NaN or Inf values")
    return q


def _resolve_mode(index: GraphIndex, config: SearchConfig) -> GraphMode:
    mode = GraphMode.parse(config.mode) if config.mode is not None else index.mode
    if mode.quantized != index.mode.quantized:
        raise ConfigurationError(f"{mode.value} search is not available on a {index.mode.value} index")
    return mode


_STAGE_TAGS = {STAGE_ASYMMETRIC: StageTag.ASYMMETRIC, STAGE_EXACT: StageTag.EXACT}


def run_query(index: GraphIndex, query: np.ndarray, config: SearchConfig) -> ResultSet:
    """
    ``search`` for a config that has already been validated; the config is only read.

    Quantized modes run the whole pipeline in one compiled call and only the
    final k candidates become Python objects.
    """
    q = _prepare_query(index, query)
    mode = _resolve_mode(index, config)
    if index.entry_point is None:
        raise EmptyIndexError("cannot search an empty index")
    stats = SearchStats()

    if mode is GraphMode.BASELINE:
        ids, dists, stats.coarse_evaluated = index.knn_arrays(q, config.beam_width)
        results = [Candidate(nid, dist, StageTag.EXACT)
                   for nid, dist in zip(ids[: config.k].tolist(), dists[: config.k].tolist())]
    else:
        qhat = quantize_query(q, index.quant_params, index.kernels)
        ids, dists, tags, evaluations, asymmetric, depth, terminated = index.query_arrays(
            qhat, q, k=config.k, ef=config.beam_width, n_coarse=config.n_coarse, n_rerank=config.n_rerank,
            tau_gap=config.tau_gap, tau_ratio=config.tau_ratio, early_termination=config.early_termination,
            full_rerank=mode is GraphMode.SCALAR_QUANT,
        )
        stats.coarse_evaluated = int(evaluations)
        stats.asymmetric_computed = int(asymmetric)
        stats.exact_computed = int(depth)
        stats.early_terminated = bool(terminated)
        results = [Candidate(nid, dist, _STAGE_TAGS[tag])
                   for nid, dist, tag in zip(ids.tolist(), dists.tolist(), tags.tolist())]
        logger.debug(
            f"Query counters: coarse={stats.coarse_evaluated} asym={stats.asymmetric_computed} "
            f"exact={stats.exact_computed} terminated={stats.early_terminated}"
        )

    stats.short_result = len(results) < config.k
    return ResultSet(results=results, stats=stats)


def search(index: GraphIndex, query: np.ndarray, config: Optional[SearchConfig] = None) -> ResultSet:
    """
    Top-k search.

    aqr: quantize -> coarse -> asymmetric -> termination check -> exact -> assemble.
    scalar-quant: coarse search, then exact rerank of every coarse candidate.
    baseline-fp32: plain HNSW on raw vectors with exact distances.

    The result equals composing the stage functions above by hand.

    Args:
        index: Built or loaded index
        query: Float vector of the index's dimension
        config: Search parameters, validated on a copy

    Returns:
        ResultSet sorted ascending by (distance, id)
    """
    return run_query(index, query, replace(config or SearchConfig()).validate())


def search_batch(index: GraphIndex, queries: np.ndarray, config: Optional[SearchConfig] = None,
                 workers: Optional[int] = None) -> List[ResultSet]:
    """
    Search many queries on a thread pool; results keep query order.

    Args:
        index: Immutable index shared by all workers
        queries: (n_q, d) matrix
        config: Search parameters, validated once on a copy the workers share read-only
        workers: Pool size; defaults to the executor's own choice
    """
    config = replace(config or SearchConfig()).validate()
    matrix = np.asarray(queries)
    if matrix.ndim != 2:
        raise DimensionMismatchError(f"queries must be a 2-dimensional matrix, got shape {matrix.shape}")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda row: run_query(index, row, config), matrix))


def brute_force_topk(index: GraphIndex, query: np.ndarray, k: int) -> List[Candidate]:
    """Exact top-k over the retained raw vectors, ties by id."""
    q = _prepare_query(index, query)
    dists = index.kernels.exact_many(q, index.raw.data, np.arange(index.n))
    order = np.lexsort((np.arange(index.n), dists))[:k]
    return [Candidate(int(i), float(dists[i]), StageTag.EXACT) for i in order]

