"""
HNSW Graph
==========
Hierarchical navigable small world graph built over 8-bit codes (or raw
floats in the baseline mode) with density-adapted construction parameters,
plus the binary index file format.

Build runs three stages: density characterization, quantizer training and
the insert loop, followed by a layer-0 reachability repair. Raw vectors
are retained for exact reranking. Traversal itself is compiled, see
graph_kernels.
"""

import io
import logging
import math
import struct
import time
import zlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import defaults
from .adaptive_quantizer import (
    DEFAULT_P_MAX,
    GraphParams,
    QuantizationParams,
    derive_graph_params,
    encode,
    train,
    train_full_range,
)
from .density_profile import DensityProfile, build_profile
from .distance_kernels import KernelSet, select_kernels
from .exceptions import (
    ConfigurationError,
    DimensionMismatchError,
    DuplicateIdError,
    EmptyIndexError,
    IndexFormatError,
)
from .graph_kernels import flood, graph_kernels
from .validation_module import FieldType, PayloadValidator, SchemaBuilder, require_valid
from .vector_store import Dataset, QuantizedSet

logger = logging.getLogger(__name__)

MAGIC = b"AQR1"
FORMAT_VERSION = 1

Neighbor = Tuple[float, int]


# ============================================================================
# Type Definitions
# ============================================================================

class GraphMode(Enum):
    """Index/search modes."""
    BASELINE = "baseline-fp32"
    SCALAR_QUANT = "scalar-quant"
    AQR = "aqr"

    @property
    def quantized(self) -> bool:
        return self is not GraphMode.BASELINE

    @classmethod
    def parse(cls, name: Union[str, "GraphMode"]) -> "GraphMode":
        """Accept enum values and the CLI spellings baseline / sq / aqr."""
        if isinstance(name, GraphMode):
            return name
        aliases = {"baseline": cls.BASELINE, "sq": cls.SCALAR_QUANT}
        key = name.strip().lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            allowed = ", ".join(["baseline", "sq"] + [mode.value for mode in cls])
            raise ConfigurationError(f"unknown mode {name!r}; expected one of {allowed}")


_MODE_CODES = {GraphMode.BASELINE: 0, GraphMode.SCALAR_QUANT: 1, GraphMode.AQR: 2}
_CODE_MODES = {code: mode for mode, code in _MODE_CODES.items()}


def _build_config_schema():
    return (SchemaBuilder()
        .add_field("m0", field_type=FieldType.INTEGER, minimum=2)
        .add_field("ef0", field_type=FieldType.INTEGER, minimum=1)
        .add_field("k_density", field_type=FieldType.INTEGER, minimum=1)
        .add_field("p_max", field_type=FieldType.FLOAT, minimum=0, maximum=50,
                   exclusive_minimum=True, exclusive_maximum=True)
        .add_field("seed", field_type=FieldType.INTEGER, minimum=0)
        .add_field("epsilon", field_type=FieldType.FLOAT, minimum=0, exclusive_minimum=True)
        .add_field("sample_threshold", field_type=FieldType.INTEGER, minimum=1)
        .add_field("sample_cap", field_type=FieldType.INTEGER, minimum=1)
        .add_field("literal_weights", field_type=FieldType.BOOLEAN)
        .build()
    )


@dataclass
class BuildConfig:
    """Inputs of an index build."""
    m0: int = 16
    ef0: int = 200
    k_density: int = 10
    p_max: float = DEFAULT_P_MAX
    seed: int = 42
    mode: GraphMode = GraphMode.AQR
    epsilon: float = 1e-6
    sample_threshold: int = 10000
    sample_cap: int = 5000
    literal_weights: bool = False

    @classmethod
    def from_settings(cls, **overrides) -> "BuildConfig":
        """Defaults from the AQR settings block, then explicit overrides."""
        conf = defaults()
        base = dict(
            k_density=conf["DENSITY_K"],
            p_max=conf["P_MAX"],
            epsilon=conf["EPSILON"],
            sample_threshold=conf["SAMPLE_THRESHOLD"],
            sample_cap=conf["SAMPLE_CAP"],
        )
        base.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**base)

    def validate(self) -> "BuildConfig":
        self.mode = GraphMode.parse(self.mode)
        require_valid(PayloadValidator(_build_config_schema()).validate(self), "build config")
        return self


@dataclass
class TraversalStats:
    """Distance evaluations performed by one traversal."""
    evaluations: int = 0


@dataclass
class AuditReport:
    """Result of a full structural scan."""
    n: int
    containment_violations: int = 0
    degree_violations: int = 0
    self_loops: int = 0
    duplicate_edges: int = 0
    reachable: int = 0
    isolated_nodes: List[int] = field(default_factory=list)

    @property
    def reachable_fraction(self) -> float:
        return self.reachable / self.n if self.n else 1.0

    @property
    def ok(self) -> bool:
        return not (self.containment_violations or self.degree_violations
                    or self.self_loops or self.duplicate_edges)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "containment_violations": self.containment_violations,
            "degree_violations": self.degree_violations,
            "self_loops": self.self_loops,
            "duplicate_edges": self.duplicate_edges,
            "reachable_fraction": self.reachable_fraction,
            "isolated_nodes": len(self.isolated_nodes),
        }


def assign_level(draw: float, m: int) -> int:
    """
    Layer of a new node: floor(-ln(draw) / ln(m)).

    Args:
        draw: Uniform draw in (0, 1]
        m: Connectivity (>= 2)
    """
    if not 0.0 < draw <= 1.0:
        raise ValueError(f"draw must lie in (0, 1], got {draw}")
    if m < 2:
        raise ValueError(f"m must be >= 2, got {m}")
    return int(math.floor(-math.log(draw) * (1.0 / math.log(m))))


# ============================================================================
# Graph Index
# ============================================================================

class GraphIndex:
    """
    Layered adjacency over quantized (or raw) vectors.

    Neighbor lists live in one int32 matrix: row ``node`` holds the layer-0
    list, upper layers use rows handed out as nodes arrive. Layer 0 caps
    degree at 2*M, upper layers at M. Once built or loaded the index is
    read-only and may be searched from many threads.
    """

    def __init__(
        self,
        mode: GraphMode,
        graph_params: GraphParams,
        d: int,
        capacity: int,
        quant_params: Optional[QuantizationParams] = None,
        seed: int = 42,
        kernels: Optional[KernelSet] = None,
    ):
        if mode.quantized and quant_params is None:
            raise IndexFormatError(f"mode {mode.value} requires quantization parameters")
        self.mode = mode
        self.graph_params = graph_params
        self.quant_params = quant_params
        self.d = d
        self.capacity = capacity
        self.kernels = kernels or select_kernels()
        self.entry_point: Optional[int] = None
        self.max_layer = -1
        self.levels = np.full(capacity, -1, dtype=np.int32)
        self.codes: Optional[QuantizedSet] = None
        self.raw: Optional[Dataset] = None
        self.profile: Optional[DensityProfile] = None
        self.build_seconds: float = 0.0
        self.repaired_links = 0
        self._graph = graph_kernels(self.kernels.active_tier, mode.quantized)
        self._rng = np.random.default_rng(seed)
        self._space = np.zeros((capacity, d), dtype=np.uint8 if mode.quantized else np.float32)
        self._count = 0

        upper_rows = capacity // max(1, graph_params.m - 1) + 16
        self._links = np.zeros((capacity + upper_rows, self._cap(0)), dtype=np.int32)
        self._degree = np.zeros(capacity + upper_rows, dtype=np.int32)
        self._upper_base = np.full(capacity, -1, dtype=np.int64)
        self._rows_used = capacity
        self._marks = np.zeros(capacity, dtype=np.uint8)
        self._tag = 0

    # ------------------------------------------------------------------
    # Basic properties
    # ------------------------------------------------------------------

    @property
    def n(self) -> int:
        return self._count

    def __len__(self) -> int:
        return self._count

    def _cap(self, layer: int) -> int:
        return 2 * self.graph_params.m if layer == 0 else self.graph_params.m

    def _row(self, node: int, layer: int) -> int:
        return node if layer == 0 else int(self._upper_base[node]) + layer - 1

    def _reserve_upper(self, node: int, level: int) -> None:
        if level < 1:
            return
        needed = self._rows_used + level
        if needed > self._links.shape[0]:
            rows = max(needed, self._links.shape[0] + self._links.shape[0] // 4)
            links = np.zeros((rows, self._links.shape[1]), dtype=np.int32)
            links[: self._links.shape[0]] = self._links
            degree = np.zeros(rows, dtype=np.int32)
            degree[: self._degree.shape[0]] = self._degree
            self._links, self._degree = links, degree
        self._upper_base[node] = self._rows_used
        self._rows_used = needed

    def _as_query(self, query: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(query, dtype=self._space.dtype)

    def neighbors(self, node: int, layer: int = 0) -> List[int]:
        """Neighbor list of ``node`` at ``layer``."""
        if not 0 <= layer <= self.levels[node]:
            raise ValueError(f"node {node} is not present at layer {layer}")
        row = self._row(node, layer)
        return self._links[row, : self._degree[row]].tolist()

    @property
    def layers(self) -> List[Dict[int, List[int]]]:
        """Adjacency as one ``{node: neighbor list}`` mapping per layer."""
        return [
            {int(node): self.neighbors(int(node), layer) for node in np.flatnonzero(self.levels >= layer)}
            for layer in range(self.max_layer + 1)
        ]

    def _row_table(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(node, layer, row) of every adjacency row in use."""
        present = np.flatnonzero(self.levels >= 0)
        upper = present[self.levels[present] >= 1]
        counts = self.levels[upper].astype(np.int64)
        up_nodes = np.repeat(upper, counts)
        offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        nodes = np.concatenate([present, up_nodes])
        layers = np.concatenate([np.zeros(present.size, dtype=np.int64), offsets + 1])
        rows = np.concatenate([present, self._upper_base[up_nodes] + offsets])
        return nodes, layers, rows

    # ------------------------------------------------------------------
    # Construction
    # ------------------------------------------------------------------

    def insert(self, vector: np.ndarray, node_id: int, level: Optional[int] = None) -> int:
        """
        Link a new node into the graph.

        Args:
            vector: Code (quantized modes) or raw vector (baseline) of the node
            node_id: Id in [0, capacity)
            level: Explicit layer; drawn from the seeded generator when None

        Returns:
            Layer assigned to the node

        Raises:
            DuplicateIdError: If node_id is already present
        """
        if not 0 <= node_id < self.capacity:
            raise IndexError(f"node id {node_id} outside capacity {self.capacity}")
        if self.levels[node_id] >= 0:
            raise DuplicateIdError(f"node id {node_id} already present")
        vector = np.asarray(vector)
        if vector.shape != (self.d,):
            raise DimensionMismatchError(f"vector shape {vector.shape} does not match d={self.d}")

        if level is None:
            level = assign_level(1.0 - self._rng.random(), self.graph_params.m)
        self._space[node_id] = vector
        self.levels[node_id] = level
        self._count += 1
        self._reserve_upper(node_id, level)

        if self.entry_point is None:
            self.entry_point = node_id
            self.max_layer = level
            return level

        gp = self.graph_params
        self._tag = self._graph.insert(
            node_id, level, self._space, self._links, self._degree, self._upper_base,
            self.entry_point, self.max_layer, gp.m, self._cap(0), gp.ef_construction,
            self._marks, self._tag,
        )
        if level > self.max_layer:
            self.max_layer = level
            self.entry_point = node_id
        return level

    def repair_reachability(self, max_rounds: int = 3) -> int:
        """
        Give each layer-0 node unreachable from the entry point an in-link.

        The new link comes from the node's nearest reachable neighbor with a
        free slot; when every candidate is full, the candidate's farthest link
        to a node that keeps another in-link is replaced.

        Returns:
            Number of links written
        """
        if self.entry_point is None:
            return 0
        written = 0
        for _ in range(max_rounds):
            reached = np.zeros(self.capacity, dtype=np.bool_)
            flood(self._links, self._degree, self.entry_point, reached)
            missing = np.flatnonzero((self.levels >= 0) & ~reached)
            if missing.size == 0:
                break
            valid = np.arange(self._links.shape[1])[None, :] < self._degree[: self.capacity, None]
            in_degree = np.bincount(self._links[: self.capacity][valid], minlength=self.capacity)
            for node in missing.tolist():
                if reached[node]:
                    continue
                found, _, _ = self._graph.knn(self._space[node], self._space, self._links, self._degree,
                                              self._upper_base, self.entry_point, self.max_layer,
                                              self.graph_params.ef_construction)
                if self._attach(node, [nid for nid in found.tolist() if nid != node and reached[nid]], in_degree):
                    written += 1
                    flood(self._links, self._degree, node, reached)
        if written:
            logger.info(f"Reachability repair wrote {written} layer-0 link(s)")
        return written

    def _attach(self, node: int, candidates: List[int], in_degree: np.ndarray) -> bool:
        cap = self._cap(0)
        for target in candidates:
            dg = int(self._degree[target])
            if dg < cap:
                self._links[target, dg] = node
                self._degree[target] = dg + 1
                in_degree[node] += 1
                return True
        for target in candidates:
            links = self._links[target, : self._degree[target]].astype(np.int64)
            dists = self._graph.score(self._space[target], self._space, links)
            for slot in np.argsort(-dists, kind="stable").tolist():
                dropped = int(links[slot])
                if in_degree[dropped] > 1:
                    self._links[target, slot] = node
                    in_degree[dropped] -= 1
                    in_degree[node] += 1
                    return True
        return False

    def finalize(self, raw: Optional[Dataset]) -> "GraphIndex":
        """Freeze storage after the last insert."""
        space = self._space[: self._count]
        if self.mode.quantized:
            self.codes = QuantizedSet.adopt(space)
            self.raw = raw
        else:
            self.raw = Dataset.adopt(space)
        self._space = space
        return self

    # ------------------------------------------------------------------
    # Search
    # ------------------------------------------------------------------

    def search_layer(
        self,
        query: np.ndarray,
        entry_ids: Sequence[int],
        ef: int,
        layer: int,
        stats: Optional[TraversalStats] = None,
    ) -> List[Neighbor]:
        """
        Best-first beam search within one layer.

        Args:
            query: Query in the graph's space (code or raw vector)
            entry_ids: Starting nodes present at ``layer``
            ef: Beam width (>= 1)
            layer: Layer to search
            stats: Optional evaluation counter

        Returns:
            Up to ``ef`` (distance, id) pairs sorted ascending; quantized modes
            report the unscaled integer sum
        """
        if ef < 1:
            raise ValueError(f"ef must be >= 1, got {ef}")
        stats = stats if stats is not None else TraversalStats()
        query = self._as_query(query)
        ids = np.asarray(list(entry_ids), dtype=np.int64)
        dists = self._graph.score(query, self._space, ids)
        stats.evaluations += len(ids)
        marks = np.zeros(self._space.shape[0], dtype=np.uint8)
        found, found_d, _, evaluations = self._graph.search_layer(
            query, self._space, self._links, self._degree, self._upper_base, layer,
            ids, dists, len(ids), ef, marks, 1, self._graph.new_acc(),
        )
        stats.evaluations += int(evaluations)
        return list(zip(found_d.tolist(), found.tolist()))

    def knn_arrays(self, query: np.ndarray, ef: int) -> Tuple[np.ndarray, np.ndarray, int]:
        """
        Greedy descent from the entry point, then a layer-0 beam of width ``ef``.

        Returns:
            (ids, distances, evaluations), ascending by (distance, id)

        Raises:
            EmptyIndexError: If the index holds no nodes
        """
        if self.entry_point is None:
            raise EmptyIndexError("index is empty")
        if ef < 1:
            raise ValueError(f"ef must be >= 1, got {ef}")
        ids, dists, evaluations = self._graph.knn(
            self._as_query(query), self._space, self._links, self._degree, self._upper_base,
            self.entry_point, self.max_layer, ef,
        )
        return ids, dists, int(evaluations)

    def knn_search(self, query: np.ndarray, ef: int,
                   stats: Optional[TraversalStats] = None) -> List[Neighbor]:
        """``knn_arrays`` as a list of (distance, id) pairs."""
        ids, dists, evaluations = self.knn_arrays(query, ef)
        if stats is not None:
            stats.evaluations += evaluations
        return list(zip(dists.tolist(), ids.tolist()))

    def query_arrays(self, qhat: np.ndarray, q: np.ndarray, k: int, ef: int, n_coarse: int, n_rerank: int,
                     tau_gap: float, tau_ratio: float, early_termination: bool, full_rerank: bool = False):
        """
        Compiled quantized query: coarse beam, asymmetric rescoring, boundary
        check, exact rerank and assembly in one call.

        ``full_rerank`` skips the asymmetric stage and reranks every coarse
        candidate exactly (the scalar-quant path).

        Returns:
            (ids, distances, stage codes, coarse evaluations, asymmetric count,
            exact count, terminated) for the first k candidates
        """
        if self.entry_point is None:
            raise EmptyIndexError("index is empty")
        if not self.mode.quantized:
            raise ValueError(f"{self.mode.value} index has no quantized query path")
        qp = self.quant_params
        q32 = np.ascontiguousarray(q, dtype=np.float32)
        return self._graph.query(
            self._as_query(qhat), q32, q32.astype(np.float64), self._space, self.raw.data,
            np.ascontiguousarray(qp.mins, dtype=np.float64), np.ascontiguousarray(qp.scales, dtype=np.float64),
            self._links, self._degree, self._upper_base, self.entry_point, self.max_layer,
            k, ef, n_coarse, n_rerank, float(tau_gap), float(tau_ratio), float(qp.epsilon),
            bool(early_termination), bool(full_rerank),
        )

    # ------------------------------------------------------------------
    # Inspection
    # ------------------------------------------------------------------

    def audit(self) -> AuditReport:
        """
        Scan degree caps, self-loops, duplicate edges, link targets and reachability.

        A containment violation is a list at layer L holding a node that is
        not present at L.
        """
        report = AuditReport(n=self.n)
        if self.entry_point is None:
            return report
        nodes, layers, rows = self._row_table()
        degree = self._degree[rows]
        caps = np.where(layers == 0, self._cap(0), self.graph_params.m)
        report.degree_violations = int((degree > caps).sum())

        width = self._links.shape[1]
        slots = np.arange(width)[None, :]
        valid = slots < degree[:, None]
        links = self._links[rows].astype(np.int64)
        report.self_loops = int(((links == nodes[:, None]) & valid).any(axis=1).sum())
        targets = np.where(valid, links, nodes[:, None])
        report.containment_violations = int((self.levels[targets] < layers[:, None]).any(axis=1).sum())
        marked = np.sort(np.where(valid, links, -1 - slots), axis=1)
        report.duplicate_edges = int((marked[:, 1:] == marked[:, :-1]).any(axis=1).sum())

        reached = np.zeros(self.capacity, dtype=np.bool_)
        flood(self._links, self._degree, self.entry_point, reached)
        report.reachable = int(reached.sum())
        report.isolated_nodes = np.flatnonzero((self.levels >= 0) & ~reached).tolist()
        return report

    def memory_footprint(self) -> Dict[str, float]:
        """Byte counts of codes, raw vectors, adjacency and quantizer parameters."""
        codes_bytes = self.codes.nbytes if self.codes is not None else 0
        raw_bytes = self.raw.nbytes if self.raw is not None else 0
        _, _, rows = self._row_table()
        graph_bytes = int(4 * (rows.size + self._degree[rows].sum()))
        params_bytes = 3 * 8 * self.d + 5 * 8 if self.quant_params is not None else 0
        return {
            "codes_bytes": codes_bytes,
            "raw_bytes": raw_bytes,
            "graph_bytes": graph_bytes,
            "params_bytes": params_bytes,
            "search_bytes": (codes_bytes if self.mode.quantized else raw_bytes) + graph_bytes,
            "code_to_raw_ratio": codes_bytes / raw_bytes if raw_bytes else 0.0,
        }

    def describe(self) -> Dict[str, object]:
        """Metadata for CLI and API responses."""
        info = {
            "mode": self.mode.value,
            "n": self.n,
            "d": self.d,
            "m": self.graph_params.m,
            "ef_construction": self.graph_params.ef_construction,
            "m0": self.graph_params.m0,
            "ef0": self.graph_params.ef0,
            "max_layer": self.max_layer,
            "entry_point": self.entry_point,
            "kernel_tier": self.kernels.active_tier.value,
            "memory": self.memory_footprint(),
        }
        if self.quant_params is not None:
            info["quantizer"] = {
                "p_low": self.quant_params.p_low,
                "p_high": self.quant_params.p_high,
                "s_dist": self.quant_params.s_dist,
                "degenerate_dims": int(self.quant_params.degenerate.sum()),
            }
        return info

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GraphIndex):
            return NotImplemented
        return (
            self.mode == other.mode
            and self.graph_params == other.graph_params
            and self.quant_params == other.quant_params
            and self.d == other.d
            and self.n == other.n
            and self.entry_point == other.entry_point
            and self.layers == other.layers
            and np.array_equal(self.levels[: self.n], other.levels[: other.n])
            and (self.codes is None) == (other.codes is None)
            and (self.codes is None or np.array_equal(self.codes.codes, other.codes.codes))
            and np.array_equal(self.raw.data, other.raw.data)
        )

    # ------------------------------------------------------------------
    # Persistence
    # ------------------------------------------------------------------

    def to_bytes(self) -> bytes:
        """Serialize to the AQR1 index format."""
        buf = io.BytesIO()
        gp = self.graph_params
        buf.write(MAGIC)
        buf.write(struct.pack("<IB", FORMAT_VERSION, _MODE_CODES[self.mode]))
        buf.write(struct.pack("<4I", gp.m, gp.ef_construction, gp.m0, gp.ef0))
        buf.write(struct.pack("<IB", self.d, 1 if self.quant_params is not None else 0))
        if self.quant_params is not None:
            qp = self.quant_params
            for arr in (qp.mins, qp.maxs, qp.scales):
                buf.write(arr.astype("<f8").tobytes())
            buf.write(struct.pack("<5d", qp.s_dist, qp.p_low, qp.p_high, qp.p_max, qp.epsilon))
        buf.write(struct.pack("<I", self.n))
        if self.codes is not None:
            buf.write(self.codes.codes.tobytes())
        buf.write(self.raw.data.astype("<f4").tobytes())
        buf.write(struct.pack("<ii", self.max_layer, -1 if self.entry_point is None else self.entry_point))
        for layer in range(self.max_layer + 1):
            nodes = np.flatnonzero(self.levels >= layer)
            buf.write(struct.pack("<I", nodes.size))
            for node in nodes.tolist():
                row = self._row(node, layer)
                degree = int(self._degree[row])
                buf.write(struct.pack("<II", node, degree))
                buf.write(self._links[row, :degree].astype("<u4").tobytes())
        payload = buf.getvalue()
        return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)

    @classmethod
    def from_bytes(cls, blob: bytes, kernels: Optional[KernelSet] = None) -> "GraphIndex":
        """Parse an AQR1 index."""
        if len(blob) < 4 or blob[:4] != MAGIC:
            raise IndexFormatError("not an AQR index")
        if len(blob) < 8:
            raise IndexFormatError("truncated index file")
        payload, trailer = blob[:-4], blob[-4:]
        (stored_crc,) = struct.unpack("<I", trailer)
        if zlib.crc32(payload) & 0xFFFFFFFF != stored_crc:
            raise IndexFormatError("checksum mismatch: index file is corrupt or truncated")

        reader = _Reader(payload, offset=4)
        version, mode_code = reader.unpack("<IB")
        if version != FORMAT_VERSION:
            raise IndexFormatError(f"unsupported index format version {version}")
        if mode_code not in _CODE_MODES:
            raise IndexFormatError(f"unknown mode byte {mode_code}")
        mode = _CODE_MODES[mode_code]
        m, ef, m0, ef0 = reader.unpack("<4I")
        d, has_quant = reader.unpack("<IB")

        quant_params = None
        if has_quant:
            mins = reader.array("<f8", d)
            maxs = reader.array("<f8", d)
            scales = reader.array("<f8", d)
            s_dist, p_low, p_high, p_max, epsilon = reader.unpack("<5d")
            quant_params = QuantizationParams(
                d=d, mins=mins, maxs=maxs, scales=scales, s_dist=s_dist,
                p_low=p_low, p_high=p_high, p_max=p_max, epsilon=epsilon,
            )

        (n,) = reader.unpack("<I")
        index = cls(mode, GraphParams(m=m, ef_construction=ef, m0=m0, ef0=ef0), d, n,
                    quant_params=quant_params, kernels=kernels)
        codes = reader.array("u1", n * d).reshape(n, d) if has_quant else None
        raw = reader.array("<f4", n * d).reshape(n, d).astype(np.float32)
        max_layer, entry_point = reader.unpack("<ii")

        lists: List[Dict[int, np.ndarray]] = []
        for layer in range(max_layer + 1):
            (count,) = reader.unpack("<I")
            adjacency: Dict[int, np.ndarray] = {}
            for _ in range(count):
                node, degree = reader.unpack("<II")
                if node >= n:
                    raise IndexFormatError(f"node id {node} out of range at layer {layer}")
                if degree > index._cap(layer):
                    raise IndexFormatError(f"node {node} has {degree} links at layer {layer}")
                links = reader.array("<u4", degree)
                if degree and int(links.max()) >= n:
                    raise IndexFormatError(f"link target out of range at layer {layer}")
                adjacency[node] = links
                index.levels[node] = max(index.levels[node], layer)
            lists.append(adjacency)
        if reader.remaining:
            raise IndexFormatError(f"{reader.remaining} unexpected trailing bytes")

        for node in range(n):
            index._reserve_upper(node, int(index.levels[node]))
        for layer, adjacency in enumerate(lists):
            for node, links in adjacency.items():
                row = index._row(node, layer)
                index._links[row, : links.size] = links
                index._degree[row] = links.size

        index.max_layer = max_layer
        index.entry_point = entry_point if entry_point >= 0 else None
        index._count = n
        index._space = codes if has_quant else raw
        index.finalize(Dataset.adopt(raw) if has_quant else None)
        return index

    def save(self, path: Union[str, Path]) -> None:
        """Write the index file."""
        Path(path).write_bytes(self.to_bytes())
        logger.info(f"Saved {self.mode.value} index with {self.n} nodes to {path}")

    @classmethod
    def load(cls, path: Union[str, Path], kernels: Optional[KernelSet] = None) -> "GraphIndex":
        """Read an index file; kernels are resolved once here."""
        try:
            blob = Path(path).read_bytes()
        except OSError as e:
            raise IndexFormatError(f"cannot read index {path}: {e.strerror}")
        index = cls.from_bytes(blob, kernels=kernels)
        logger.info(f"Loaded {index.mode.value} index with {index.n} nodes from {path}")
        return index


class _Reader:
    """Bounds-checked cursor over index bytes."""

    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.offset = offset

    @property
    def remaining(self) -> int:
        return len(self.data) - self.offset

    def _take(self, size: int) -> bytes:
        if size > self.remaining:
            raise IndexFormatError("truncated index file")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self._take(struct.calcsize(fmt)))

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self._take(dt.itemsize * count), dtype=dt).astype(dt.newbyteorder("="))


# ============================================================================
# Build
# ============================================================================

def build(dataset: Dataset, config: Optional[BuildConfig] = None,
          kernels: Optional[KernelSet] = None) -> GraphIndex:
    """
    Build an index over a dataset.

    aqr: density profile -> adaptive quantizer -> insert codes with adapted M/ef.
    scalar-quant: full-range min/max quantizer, base M/ef.
    baseline-fp32: raw float vectors, exact distances, base M/ef.

    Args:
        dataset: Vectors to index; ids are row numbers
        config: Build configuration
        kernels: Kernel set; resolved from the host when None

    Returns:
        Finalized GraphIndex with ``build_seconds`` set
    """
    config = (config or BuildConfig()).validate()
    kernels = kernels or select_kernels()
    started = time.perf_counter()

    profile = None
    if config.mode is GraphMode.AQR:
        profile = build_profile(
            dataset,
            k=config.k_density,
            sample_threshold=config.sample_threshold,
            sample_cap=config.sample_cap,
            seed=config.seed,
            epsilon=config.epsilon,
            literal_weights=config.literal_weights,
        )
        quant_params = train(dataset, profile, config.p_max, config.epsilon)
        graph_params = derive_graph_params(config.m0, config.ef0, profile.delta, profile.eta)
    elif config.mode is GraphMode.SCALAR_QUANT:
        quant_params = train_full_range(dataset, config.epsilon)
        graph_params = GraphParams(m=config.m0, ef_construction=config.ef0, m0=config.m0, ef0=config.ef0)
    else:
        quant_params = None
        graph_params = GraphParams(m=config.m0, ef_construction=config.ef0, m0=config.m0, ef0=config.ef0)

    source = encode(dataset.data, quant_params) if quant_params is not None else dataset.data
    index = GraphIndex(config.mode, graph_params, dataset.d, dataset.n,
                       quant_params=quant_params, seed=config.seed, kernels=kernels)
    index.profile = profile

    step = max(1, dataset.n // 10)
    for node_id in range(dataset.n):
        index.insert(source[node_id], node_id)
        if (node_id + 1) % step == 0:
            logger.info(f"Inserted {node_id + 1}/{dataset.n} nodes")

    index.repaired_links = index.repair_reachability()
    index.finalize(dataset if quant_params is not None else None)
    index.build_seconds = time.perf_counter() - started

    report = index.audit()
    if report.isolated_nodes:
        logger.warning(
            f"{len(report.isolated_nodes)} node(s) unreachable from the entry point at layer 0 "
            f"(reachable fraction {report.reachable_fraction:.4f})"
        )
    logger.info(
        f"Built {config.mode.value} index: n={dataset.n} d={dataset.d} M={graph_params.m} "
        f"ef_construction={graph_params.ef_construction} in {index.build_seconds:.2f}s"
    )
    return index


def save(index: GraphIndex, path: Union[str, Path]) -> None:
    index.save(path)


def load(path: Union[str, Path], kernels: Optional[KernelSet] = None) -> GraphIndex:
    return GraphIndex.load(path, kernels=kernels)
