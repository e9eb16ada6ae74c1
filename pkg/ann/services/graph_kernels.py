"""
Graph Kernels
=============
Compiled HNSW traversal over array adjacency: layer beam search, insertion
with heuristic neighbor selection, layer-0 reachability and the fused
quantized query path. One set is compiled per (kernel tier, vector space)
on top of that tier's distance cores.

Adjacency layout: ``links[row, :degree[row]]`` where ``row == node`` at
layer 0 and ``upper_base[node] + layer - 1`` above it. Heaps order
entries by (distance, id) so ties resolve exactly like a sorted list of
tuples.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from numba import njit

from .distance_kernels import KernelTier, kernels_for_tier

STAGE_ASYMMETRIC = 1
STAGE_EXACT = 2

# Visit marks are one byte; tags wrap by clearing the mark array.
MAX_TAG = 255


# ============================================================================
# Heap and Array Helpers
# ============================================================================

@njit(nogil=True, inline="always")
def _before(d1, i1, d2, i2):
    return d1 < d2 or (d1 == d2 and i1 < i2)


@njit(nogil=True, inline="always")
def _row(node, layer, upper_base):
    if layer == 0:
        return np.int64(node)
    return np.int64(upper_base[node] + layer - 1)


@njit(nogil=True)
def _min_push(hd, hi, size, d, i):
    pos = size
    while pos > 0:
        parent = (pos - 1) >> 1
        if not _before(d, i, hd[parent], hi[parent]):
            break
        hd[pos] = hd[parent]
        hi[pos] = hi[parent]
        pos = parent
    hd[pos] = d
    hi[pos] = i
    return size + 1


@njit(nogil=True)
def _min_pop(hd, hi, size):
    size -= 1
    if size == 0:
        return 0
    d = hd[size]
    i = hi[size]
    pos = 0
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        if child + 1 < size and _before(hd[child + 1], hi[child + 1], hd[child], hi[child]):
            child += 1
        if not _before(hd[child], hi[child], d, i):
            break
        hd[pos] = hd[child]
        hi[pos] = hi[child]
        pos = child
    hd[pos] = d
    hi[pos] = i
    return size


@njit(nogil=True)
def _max_push(hd, hi, size, d, i):
    pos = size
    while pos > 0:
        parent = (pos - 1) >> 1
        if not _before(hd[parent], hi[parent], d, i):
            break
        hd[pos] = hd[parent]
        hi[pos] = hi[parent]
        pos = parent
    hd[pos] = d
    hi[pos] = i
    return size + 1


@njit(nogil=True)
def _max_pop(hd, hi, size):
    size -= 1
    if size == 0:
        return 0
    d = hd[size]
    i = hi[size]
    pos = 0
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        if child + 1 < size and _before(hd[child], hi[child], hd[child + 1], hi[child + 1]):
            child += 1
        if not _before(d, i, hd[child], hi[child]):
            break
        hd[pos] = hd[child]
        hi[pos] = hi[child]
        pos = child
    hd[pos] = d
    hi[pos] = i
    return size


@njit(nogil=True)
def _grow(hd, hi):
    nd = np.empty(hd.shape[0] * 2, dtype=np.float64)
    ni = np.empty(hi.shape[0] * 2, dtype=np.int64)
    nd[: hd.shape[0]] = hd
    ni[: hi.shape[0]] = hi
    return nd, ni


@njit(nogil=True)
def _sort_pairs(ds, ids, count):
    """Insertion sort of the first ``count`` entries by (distance, id)."""
    for a in range(1, count):
        d = ds[a]
        i = ids[a]
        b = a - 1
        while b >= 0 and _before(d, i, ds[b], ids[b]):
            ds[b + 1] = ds[b]
            ids[b + 1] = ids[b]
            b -= 1
        ds[b + 1] = d
        ids[b + 1] = i


@njit(nogil=True)
def _sort_tagged(ds, ids, tags, count):
    for a in range(1, count):
        d = ds[a]
        i = ids[a]
        t = tags[a]
        b = a - 1
        while b >= 0 and _before(d, i, ds[b], ids[b]):
            ds[b + 1] = ds[b]
            ids[b + 1] = ids[b]
            tags[b + 1] = tags[b]
            b -= 1
        ds[b + 1] = d
        ids[b + 1] = i
        tags[b + 1] = t


@njit(nogil=True)
def _next_tag(marks, tag):
    if tag >= MAX_TAG:
        marks[:] = 0
        return 1
    return tag + 1


@njit(nogil=True)
def flood(links, degree, start, reached):
    """Mark every layer-0 node reachable from ``start``; returns how many were newly marked."""
    if reached[start]:
        return 0
    queue = np.empty(reached.shape[0], dtype=np.int64)
    queue[0] = start
    reached[start] = True
    head = 0
    tail = 1
    while head < tail:
        node = queue[head]
        head += 1
        for s in range(degree[node]):
            nid = links[node, s]
            if not reached[nid]:
                reached[nid] = True
                queue[tail] = nid
                tail += 1
    return tail


# ============================================================================
# Compiled Traversal
# ============================================================================

@dataclass(frozen=True)
class GraphKernels:
    """Jitted traversal functions of one tier and vector space."""
    tier: KernelTier
    quantized: bool
    new_acc: Callable
    score: Callable
    search_layer: Callable
    knn: Callable
    insert: Callable
    query: Optional[Callable] = None


def _compile(tier: KernelTier, quantized: bool) -> GraphKernels:
    cores = kernels_for_tier(tier).cores
    lanes = cores.lanes
    quantized_core = cores.quantized
    sq_core = cores.sq_euclidean

    if quantized:
        @njit(nogil=True)
        def new_acc():
            return np.zeros(lanes, dtype=np.uint32)

        # Unscaled integer sum; s_dist never changes the order.
        @njit(nogil=True)
        def dist(a, b, acc):
            return np.float64(quantized_core(a, b, acc))
    else:
        @njit(nogil=True)
        def new_acc():
            return np.zeros(lanes, dtype=np.float64)

        @njit(nogil=True)
        def dist(a, b, acc):
            return sq_core(a, b, acc)

    @njit(nogil=True)
    def score(query, space, ids):
        acc = new_acc()
        out = np.empty(ids.shape[0], dtype=np.float64)
        for s in range(ids.shape[0]):
            out[s] = dist(query, space[ids[s]], acc)
        return out

    @njit(nogil=True)
    def search_layer(query, space, links, degree, upper_base, layer,
                     entry_ids, entry_d, n_entry, ef, marks, tag, acc):
        cand_d = np.empty(max(4 * ef, 64) + n_entry, dtype=np.float64)
        cand_i = np.empty(cand_d.shape[0], dtype=np.int64)
        res_d = np.empty(max(ef, n_entry) + 1, dtype=np.float64)
        res_i = np.empty(res_d.shape[0], dtype=np.int64)
        nc = 0
        nr = 0
        for e in range(n_entry):
            marks[entry_ids[e]] = tag
            nc = _min_push(cand_d, cand_i, nc, entry_d[e], entry_ids[e])
            nr = _max_push(res_d, res_i, nr, entry_d[e], entry_ids[e])
        while nr > ef:
            nr = _max_pop(res_d, res_i, nr)
        wd = res_d[0]
        wi = res_i[0]

        evaluations = 0
        while nc > 0:
            cd = cand_d[0]
            ci = cand_i[0]
            nc = _min_pop(cand_d, cand_i, nc)
            if _before(wd, wi, cd, ci):
                break
            row = _row(ci, layer, upper_base)
            for s in range(degree[row]):
                nid = np.int64(links[row, s])
                if marks[nid] == tag:
                    continue
                marks[nid] = tag
                dd = dist(query, space[nid], acc)
                evaluations += 1
                if nr < ef or _before(dd, nid, wd, wi):
                    if nc == cand_d.shape[0]:
                        cand_d, cand_i = _grow(cand_d, cand_i)
                    nc = _min_push(cand_d, cand_i, nc, dd, nid)
                    nr = _max_push(res_d, res_i, nr, dd, nid)
                    if nr > ef:
                        nr = _max_pop(res_d, res_i, nr)
                    wd = res_d[0]
                    wi = res_i[0]

        out_d = np.empty(nr, dtype=np.float64)
        out_i = np.empty(nr, dtype=np.int64)
        for pos in range(out_d.shape[0] - 1, -1, -1):
            out_d[pos] = res_d[0]
            out_i[pos] = res_i[0]
            nr = _max_pop(res_d, res_i, nr)
        return out_i, out_d, out_d.shape[0], evaluations

    @njit(nogil=True)
    def knn(query, space, links, degree, upper_base, entry_point, max_layer, ef):
        marks = np.zeros(space.shape[0], dtype=np.uint8)
        acc = new_acc()
        ids = np.empty(1, dtype=np.int64)
        ds = np.empty(1, dtype=np.float64)
        ids[0] = entry_point
        ds[0] = dist(query, space[entry_point], acc)
        count = 1
        evaluations = 1
        tag = 0
        for layer in range(max_layer, 0, -1):
            tag += 1
            ids, ds, count, ev = search_layer(query, space, links, degree, upper_base, layer,
                                              ids, ds, count, 1, marks, tag, acc)
            evaluations += ev
        ids, ds, count, ev = search_layer(query, space, links, degree, upper_base, 0,
                                          ids, ds, count, ef, marks, tag + 1, acc)
        return ids, ds, evaluations + ev

    @njit(nogil=True)
    def select_neighbors(ids, ds, count, m, space, out, acc):
        # Keep a candidate unless an already kept one is closer to it than the
        # base is; pruned candidates then fill the list up to m in order.
        kept = 0
        pruned = np.empty(count, dtype=np.int64)
        n_pruned = 0
        for c in range(count):
            if kept >= m:
                break
            e = ids[c]
            diverse = True
            for s in range(kept):
                if dist(space[e], space[out[s]], acc) < ds[c]:
                    diverse = False
                    break
            if diverse:
                out[kept] = e
                kept += 1
            else:
                pruned[n_pruned] = e
                n_pruned += 1
        p = 0
        while kept < m and p < n_pruned:
            out[kept] = pruned[p]
            kept += 1
            p += 1
        return kept

    @njit(nogil=True)
    def link_back(target, node, layer, cap, space, links, degree, upper_base, acc):
        row = _row(target, layer, upper_base)
        dg = degree[row]
        if dg < cap:
            links[row, dg] = node
            degree[row] = dg + 1
            return
        base = space[target]
        ids = np.empty(dg + 1, dtype=np.int64)
        ds = np.empty(dg + 1, dtype=np.float64)
        for s in range(dg):
            ids[s] = links[row, s]
            ds[s] = dist(base, space[ids[s]], acc)
        ids[dg] = node
        ds[dg] = dist(base, space[node], acc)
        _sort_pairs(ds, ids, dg + 1)
        kept = np.empty(dg + 1, dtype=np.int64)
        n_kept = select_neighbors(ids, ds, dg + 1, cap, space, kept, acc)
        for s in range(n_kept):
            links[row, s] = kept[s]
        degree[row] = n_kept

    @njit(nogil=True)
    def insert(node, level, space, links, degree, upper_base, entry_point, max_layer,
               m, cap0, ef_construction, marks, tag):
        acc = new_acc()
        query = space[node]
        ids = np.empty(1, dtype=np.int64)
        ds = np.empty(1, dtype=np.float64)
        ids[0] = entry_point
        ds[0] = dist(query, space[entry_point], acc)
        count = 1
        for layer in range(max_layer, level, -1):
            tag = _next_tag(marks, tag)
            ids, ds, count, _ = search_layer(query, space, links, degree, upper_base, layer,
                                             ids, ds, count, 1, marks, tag, acc)

        selected = np.empty(cap0 + 1, dtype=np.int64)
        for layer in range(min(level, max_layer), -1, -1):
            tag = _next_tag(marks, tag)
            ids, ds, count, _ = search_layer(query, space, links, degree, upper_base, layer,
                                             ids, ds, count, ef_construction, marks, tag, acc)
            n_sel = select_neighbors(ids, ds, count, m, space, selected, acc)
            row = _row(node, layer, upper_base)
            for s in range(n_sel):
                links[row, s] = selected[s]
            degree[row] = n_sel
            cap = cap0 if layer == 0 else m
            for s in range(n_sel):
                link_back(selected[s], node, layer, cap, space, links, degree, upper_base, acc)
        return tag

    query = None
    if quantized:
        @njit(nogil=True)
        def query(qhat, q32, q64, space, raw, mins, scales, links, degree, upper_base,
                  entry_point, max_layer, k, ef, n_coarse, n_rerank, tau_gap, tau_ratio,
                  epsilon, early_termination, full_rerank):
            ids, _, evaluations = knn(qhat, space, links, degree, upper_base, entry_point, max_layer, ef)
            count = min(n_coarse, ids.shape[0])
            acc = np.zeros(lanes, dtype=np.float64)
            cand_i = ids[:count].copy()
            cand_d = np.empty(count, dtype=np.float64)
            tags = np.full(count, STAGE_ASYMMETRIC, dtype=np.int8)
            asymmetric = 0
            terminated = False
            if full_rerank:
                depth = count
            else:
                d = q64.shape[0]
                xtilde = np.empty(d, dtype=np.float64)
                for s in range(count):
                    row = space[cand_i[s]]
                    for j in range(d):
                        xtilde[j] = np.float64(row[j]) / scales[j] + mins[j]
                    cand_d[s] = sq_core(q64, xtilde, acc)
                asymmetric = count
                _sort_pairs(cand_d, cand_i, count)
                if early_termination and count > k:
                    d_k = cand_d[k - 1]
                    d_next = cand_d[k]
                    gap = (d_next - d_k) / (d_k + epsilon)
                    ratio = d_next / (d_k + epsilon)
                    terminated = gap > tau_gap or ratio > tau_ratio
                depth = min(k, count) if terminated else min(n_rerank, count)
            for s in range(depth):
                cand_d[s] = sq_core(q32, raw[cand_i[s]], acc)
                tags[s] = STAGE_EXACT
            _sort_tagged(cand_d, cand_i, tags, count)
            keep = min(k, count)
            return (cand_i[:keep], cand_d[:keep], tags[:keep],
                    evaluations, asymmetric, depth, terminated)

    return GraphKernels(
        tier=tier,
        quantized=quantized,
        new_acc=new_acc,
        score=score,
        search_layer=search_layer,
        knn=knn,
        insert=insert,
        query=query,
    )


@lru_cache(maxsize=None)
def graph_kernels(tier: KernelTier, quantized: bool) -> GraphKernels:
    """Traversal kernels for a tier over codes (``quantized``) or raw float vectors."""
    return _compile(tier, quantized)
