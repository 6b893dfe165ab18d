"""Exact and graph-based k-nearest-neighbour search over a set of centres.

The graph index is built by taking each node's exact nearest candidates and
keeping an edge only when no already-kept, closer neighbour occludes it.
Queries walk the graph best-first, expanding the closest unexpanded vertex
until the expansion budget runs out.  All distances are squared Euclidean.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

GRAPH_MAGIC = b"NNKG"
GRAPH_VERSION = 1
EXACT_THRESHOLD = 2000


@dataclass(frozen=True)
class SearchParams:
    k: int = 100
    backtrack_budget: int = 1500
    restarts: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.backtrack_budget < self.k:
            raise ValueError("backtrack_budget must be >= k")
        if self.restarts < 0:
            raise ValueError("restarts must be non-negative")


@dataclass(frozen=True)
class GraphIndex:
    adjacency: Tuple[np.ndarray, ...]
    max_degree: int

    @property
    def node_count(self) -> int:
        return len(self.adjacency)

    def __eq__(self, other):
        if not isinstance(other, GraphIndex):
            return NotImplemented
        return (
            self.max_degree == other.max_degree
            and self.node_count == other.node_count
            and all(np.array_equal(a, b) for a, b in zip(self.adjacency, other.adjacency))
        )


def _as_matrix(centres) -> np.ndarray:
    centres = np.asarray(centres, dtype=np.float64)
    if centres.ndim != 2:
        raise ValueError("centres must be a 2-D matrix")
    return centres


def _sorted_pairs(ids: np.ndarray, dists: np.ndarray, k: int) -> List[Tuple[int, float]]:
    order = np.lexsort((ids, dists))[:k]
    return [(int(ids[i]), float(dists[i])) for i in order]


def brute_force_knn(query, centres, k: int, exclude: Optional[int] = None) -> List[Tuple[int, float]]:
    """Exact k nearest centres, ascending by squared distance, ties by lower id."""
    centres = _as_matrix(centres)
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (centres.shape[1],):
        raise ValueError(f"query shape {query.shape} does not match centres {centres.shape}")
    m = centres.shape[0]
    available = m - (1 if exclude is not None and 0 <= exclude < m else 0)
    if not 1 <= k <= available:
        raise ValueError(f"k={k} but only {available} centres are available")
    diff = centres - query
    dists = np.einsum("ij,ij->i", diff, diff)
    ids = np.arange(m)
    if exclude is not None:
        keep = ids != exclude
        ids, dists = ids[keep], dists[keep]
    return _sorted_pairs(ids, dists, k)


def knn_table(queries, centres, k: int, exclude_self: bool = False, chunk: int = 256):
    """Exact k-NN for many queries at once.

    Candidates come from the Gram expansion, then the best ``k + margin`` are
    rescored with direct differences and sorted by ``(distance, id)``.  With
    ``exclude_self`` query ``i`` never returns centre ``i``.
    Returns ``(ids, sq_dists)``, both ``(n, k)``.
    """
    queries = _as_matrix(queries)
    centres = _as_matrix(centres)
    n, m = queries.shape[0], centres.shape[0]
    if queries.shape[1] != centres.shape[1]:
        raise ValueError("query and centre dimensions differ")
    available = m - 1 if exclude_self else m
    if not 1 <= k <= available:
        raise ValueError(f"k={k} but only {available} centres are available")
    if exclude_self and n != m:
        raise ValueError("exclude_self needs queries to be the centres themselves")
    pool = min(available, k + max(8, k // 4))
    c_norm = np.einsum("ij,ij->i", centres, centres)
    out_ids = np.empty((n, k), dtype=np.int64)
    out_d = np.empty((n, k))
    for start in range(0, n, chunk):
        q = queries[start:start + chunk]
        approx = c_norm[None, :] - 2.0 * q @ centres.T
        if exclude_self:
            approx[np.arange(len(q)), np.arange(start, start + len(q))] = np.inf
        if pool < m:
            cand = np.argpartition(approx, pool - 1, axis=1)[:, :pool]
        else:
            cand = np.broadcast_to(np.arange(m), (len(q), m)).copy()
        diff = centres[cand] - q[:, None, :]
        exact = np.einsum("bkd,bkd->bk", diff, diff)
        if exclude_self:
            exact[cand == np.arange(start, start + len(q))[:, None]] = np.inf
        for r in range(len(q)):
            order = np.lexsort((cand[r], exact[r]))[:k]
            out_ids[start + r] = cand[r, order]
            out_d[start + r] = exact[r, order]
    return out_ids, out_d


def build_graph(centres, max_degree: int = 32, pool_factor: int = 4) -> GraphIndex:
    """Occlusion-pruned directed graph over ``centres``.

    Each node takes its exact ``pool_factor * max_degree`` nearest neighbours
    in ascending order and keeps candidate ``r`` unless some kept ``q`` is
    strictly closer to ``r`` than the node itself is.
    """
    centres = _as_matrix(centres)
    m = centres.shape[0]
    if m < 2:
        raise ValueError("a graph needs at least two nodes")
    if max_degree < 1:
        raise ValueError("max_degree must be at least 1")
    pool = min(pool_factor * max_degree, m - 1)
    cand, cand_d = knn_table(centres, centres, pool, exclude_self=True)
    adjacency = []
    for p in range(m):
        ids = cand[p]
        v = centres[ids]
        norms = np.einsum("ij,ij->i", v, v)
        pair = norms[:, None] + norms[None, :] - 2.0 * (v @ v.T)
        occluded = np.zeros(pool, dtype=bool)
        kept = []
        r = 0
        while r < pool and len(kept) < max_degree:
            kept.append(r)
            occluded |= pair[r] < cand_d[p]
            free = np.flatnonzero(~occluded[r + 1:])
            if free.size == 0:
                break
            r = r + 1 + free[0]
        adjacency.append(ids[kept].astype(np.int64))
    return GraphIndex(tuple(adjacency), max_degree)


def search(index: GraphIndex, centres, query, params: SearchParams = SearchParams(), exclude: Optional[int] = None):
    """Best-first graph traversal with a bounded number of expansions.

    Starts from node 0 plus ``params.restarts`` seeded random nodes.  If the
    frontier empties before the budget is spent, traversal restarts from an
    unvisited node, so a budget of ``node_count`` evaluates every node.
    """
    centres = _as_matrix(centres)
    m = index.node_count
    if m == 0:
        raise ValueError("empty index")
    if centres.shape[0] != m:
        raise ValueError("index and centres disagree on node count")
    query = np.asarray(query, dtype=np.float64)
    rng = np.random.default_rng(params.seed)
    order = rng.permutation(m)
    seen = np.zeros(m, dtype=bool)
    dist = np.full(m, np.inf)
    frontier: list = []

    def visit(ids):
        ids = ids[~seen[ids]]
        if ids.size == 0:
            return
        seen[ids] = True
        diff = centres[ids] - query
        d = np.einsum("ij,ij->i", diff, diff)
        dist[ids] = d
        for i, di in zip(ids.tolist(), d.tolist()):
            heapq.heappush(frontier, (di, i))

    entries = [0] + [int(i) for i in order[: params.restarts] if i != 0]
    visit(np.asarray(entries, dtype=np.int64))
    cursor = 0
    expanded = 0
    while expanded < params.backtrack_budget:
        if not frontier:
            while cursor < m and seen[order[cursor]]:
                cursor += 1
            if cursor == m:
                break
            visit(order[cursor:cursor + 1])
            continue
        _, u = heapq.heappop(frontier)
        expanded += 1
        visit(index.adjacency[u])
    ids = np.flatnonzero(seen)
    if exclude is not None:
        ids = ids[ids != exclude]
    return _sorted_pairs(ids, dist[ids], params.k)


class NeighbourIndex:
    """Exact search for small banks, graph search above ``exact_threshold``."""

    def __init__(self, centres, max_degree: int = 32, params: SearchParams = SearchParams(),
                 exact_threshold: int = EXACT_THRESHOLD):
        self.centres = _as_matrix(centres)
        self.params = params
        self.exact = self.centres.shape[0] <= exact_threshold
        self.graph = None if self.exact else build_graph(self.centres, max_degree)

    def query(self, query, k: int, exclude: Optional[int] = None) -> np.ndarray:
        if self.exact:
            pairs = brute_force_knn(query, self.centres, k, exclude)
        else:
            budget = max(self.params.backtrack_budget, k)
            params = SearchParams(k, budget, self.params.restarts, self.params.seed)
            pairs = search(self.graph, self.centres, query, params, exclude)
        return np.array([i for i, _ in pairs], dtype=np.int64)

    def table(self, queries, k: int, exclude_self: bool = False) -> np.ndarray:
        if self.exact:
            return knn_table(queries, self.centres, k, exclude_self)[0]
        return np.stack([
            self.query(q, k, i if exclude_self else None) for i, q in enumerate(np.asarray(queries))
        ])


def save_graph(index: GraphIndex, path) -> None:
    with open(path, "wb") as fh:
        fh.write(GRAPH_MAGIC)
        fh.write(struct.pack("<HQI", GRAPH_VERSION, index.node_count, index.max_degree))
        for edges in index.adjacency:
            fh.write(struct.pack("<I", len(edges)))
            fh.write(np.asarray(edges, dtype="<u4").tobytes())


def load_graph(path) -> GraphIndex:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != GRAPH_MAGIC:
        raise ValueError(f"{path}: not an NNKG file")
    version, node_count, max_degree = struct.unpack_from("<HQI", data, 4)
    if version != GRAPH_VERSION:
        raise ValueError(f"{path}: unsupported NNKG version {version}")
    offset = 4 + struct.calcsize("<HQI")
    adjacency = []
    for node in range(node_count):
        if offset + 4 > len(data):
            raise ValueError(f"{path}: truncated at node {node} (offset {offset})")
        (count,) = struct.unpack_from("<I", data, offset)
        offset += 4
        edges = np.frombuffer(data, dtype="<u4", count=count, offset=offset).astype(np.int64)
        offset += 4 * count
        if edges.size and edges.max() >= node_count:
            raise ValueError(f"{path}: edge id out of range at node {node}")
        adjacency.append(edges)
    if offset != len(data):
        raise ValueError(f"{path}: {len(data) - offset} trailing bytes")
    return GraphIndex(tuple(adjacency), max_degree)
