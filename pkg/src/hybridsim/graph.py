"""Weighted undirected graphs, instance generators and brute-force distance oracles."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

INF = float("inf")
# integer distances are held in float64; every sum stays below this bound
EXACT_LIMIT = 2 ** 53


class GraphError(ValueError):
    pass


class DisconnectedGraph(GraphError):
    pass


@dataclass(eq=False)
class WeightedGraph:
    """Immutable simple undirected graph on nodes 0..n-1 with positive integer weights.

    Edges are stored once with u < v. Derived structures (adjacency, CSR, arc
    arrays) are built lazily and cached on the instance.
    """

    n: int
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    W: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_edges(cls, n: int, edges, W: Optional[int] = None) -> "WeightedGraph":
        if n < 1:
            raise GraphError("graph needs at least one node")
        arr = np.asarray(list(edges), dtype=np.int64).reshape(-1, 3)
        a = np.minimum(arr[:, 0], arr[:, 1])
        b = np.maximum(arr[:, 0], arr[:, 1])
        w = arr[:, 2]
        if len(arr):
            if a.min() < 0 or b.max() >= n:
                raise GraphError("node id out of range")
            if np.any(a == b):
                raise GraphError("self-loop")
            if w.min() < 1:
                raise GraphError("weights must be >= 1")
        if W is None:
            W = max(n * n, int(w.max()) if len(w) else 1)
        if len(w) and w.max() > W:
            raise GraphError(f"weight {int(w.max())} exceeds W={W}")
        if (n - 1) * W >= EXACT_LIMIT:
            raise GraphError("weight bound too large for exact distances")
        order = np.lexsort((b, a))
        a, b, w = a[order], b[order], w[order]
        if len(a) > 1:
            dup = (a[1:] == a[:-1]) & (b[1:] == b[:-1])
            if dup.any():
                raise GraphError("duplicate edge")
        return cls(n=n, u=a, v=b, w=w, W=int(W))

    @property
    def m(self) -> int:
        return len(self.u)

    @property
    def edges(self) -> list:
        return list(zip(self.u.tolist(), self.v.tolist(), self.w.tolist()))

    @property
    def adjacency(self) -> list:
        if "adj" not in self._cache:
            adj = [[] for _ in range(self.n)]
            for a, b, w in self.edges:
                adj[a].append((b, w))
                adj[b].append((a, w))
            for lst in adj:
                lst.sort()
            self._cache["adj"] = adj
        return self._cache["adj"]

    @property
    def degree(self) -> np.ndarray:
        if "deg" not in self._cache:
            self._cache["deg"] = np.bincount(np.concatenate([self.u, self.v]), minlength=self.n)
        return self._cache["deg"]

    @property
    def unweighted(self) -> bool:
        return bool(np.all(self.w == 1))

    def arcs(self):
        """Directed arcs sorted by head: (src, dst, w, starts, heads).

        `starts` indexes the first arc of every head in `heads`, ready for
        np.*.reduceat.
        """
        if "arcs" not in self._cache:
            src = np.concatenate([self.u, self.v])
            dst = np.concatenate([self.v, self.u])
            w = np.concatenate([self.w, self.w]).astype(np.float64)
            order = np.lexsort((src, dst))
            src, dst, w = src[order], dst[order], w[order]
            heads, starts = np.unique(dst, return_index=True)
            self._cache["arcs"] = (src, dst, w, starts, heads)
        return self._cache["arcs"]

    def csr(self, data=None) -> sp.csr_matrix:
        """Symmetric CSR matrix; `data` overrides the per-edge values."""
        vals = self.w.astype(np.float64) if data is None else data
        mat = sp.coo_matrix(
            (np.concatenate([vals, vals]), (np.concatenate([self.u, self.v]), np.concatenate([self.v, self.u]))),
            shape=(self.n, self.n),
        )
        return mat.tocsr()

    def is_connected(self) -> bool:
        if self.n == 1:
            return True
        from scipy.sparse.csgraph import connected_components

        k, _ = connected_components(self.csr(np.ones(self.m)), directed=False)
        return k == 1


@dataclass
class DistanceVector:
    source: int
    dist: np.ndarray
    hop_limit: Optional[int] = None

    def __getitem__(self, i):
        return self.dist[i]

    def __len__(self):
        return len(self.dist)


# ---------------------------------------------------------------------------
# reference oracles


def dijkstra(g: WeightedGraph, s: int) -> DistanceVector:
    if not 0 <= s < g.n:
        raise GraphError("source out of range")
    dist = [INF] * g.n
    dist[s] = 0
    heap = [(0, s)]
    adj = g.adjacency
    while heap:
        d, x = heapq.heappop(heap)
        if d > dist[x]:
            continue
        for y, w in adj[x]:
            nd = d + w
            if nd < dist[y]:
                dist[y] = nd
                heapq.heappush(heap, (nd, y))
    return DistanceVector(s, np.array(dist, dtype=np.float64))


def bellman_ford(g: WeightedGraph, s: int, rounds: Optional[int] = None) -> DistanceVector:
    """Plain synchronous Bellman-Ford over the edge list (pure Python)."""
    dist = [INF] * g.n
    dist[s] = 0
    limit = g.n - 1 if rounds is None else rounds
    edges = g.edges
    for _ in range(limit):
        new = dist[:]
        for a, b, w in edges:
            if dist[a] + w < new[b]:
                new[b] = dist[a] + w
            if dist[b] + w < new[a]:
                new[a] = dist[b] + w
        if new == dist:
            break
        dist = new
    return DistanceVector(s, np.array(dist, dtype=np.float64), rounds)


def relax_rounds(g: WeightedGraph, init: np.ndarray, rounds: int) -> np.ndarray:
    """Synchronous relaxation: after r rounds entry u holds min_v init[v] + d^r(v, u).

    `init` may be a vector (n,) or a matrix (n, k) of independent columns.
    Only arcs leaving nodes that changed in the previous round are relaxed
    (the others were already absorbed). Stops early at a fixed point.
    """
    src, dst, w, _, _ = g.arcs()
    d = np.array(init, dtype=np.float64, copy=True)
    if len(src) == 0:
        return d
    changed = np.ones(g.n, dtype=bool)
    for _ in range(rounds):
        sel = changed[src]
        if not sel.any():
            break
        s_src, s_w = src[sel], w[sel]
        heads, starts = np.unique(dst[sel], return_index=True)
        cand = d[s_src] + (s_w if d.ndim == 1 else s_w[:, None])
        best = np.minimum.reduceat(cand, starts, axis=0)
        cur = d[heads]
        better = best < cur
        moved = better if d.ndim == 1 else better.any(axis=1)
        if not moved.any():
            break
        d[heads] = np.where(better, best, cur)
        changed[:] = False
        changed[heads[moved]] = True
    return d


def hop_limited_distances(g: WeightedGraph, s: int, h: int) -> DistanceVector:
    if h < 1:
        raise GraphError("hop limit must be >= 1")
    init = np.full(g.n, INF)
    init[s] = 0
    return DistanceVector(s, relax_rounds(g, init, h), h)


def brute_eccentricities(g: WeightedGraph) -> np.ndarray:
    ecc = np.zeros(g.n)
    for s in range(g.n):
        d = dijkstra(g, s).dist
        if np.isinf(d).any():
            raise DisconnectedGraph("eccentricity undefined on a disconnected graph")
        ecc[s] = d.max()
    return ecc


def hop_distances(g: WeightedGraph, s: int) -> np.ndarray:
    """BFS hop counts from s (inf when unreachable)."""
    hop = np.full(g.n, INF)
    hop[s] = 0
    frontier = [s]
    adj = g.adjacency
    level = 0
    while frontier:
        level += 1
        nxt = []
        for x in frontier:
            for y, _ in adj[x]:
                if hop[y] == INF:
                    hop[y] = level
                    nxt.append(y)
        frontier = nxt
    return hop


# ---------------------------------------------------------------------------
# generators

MODELS = ("erdos-renyi", "random-geometric", "grid", "path", "lollipop")


def _weights(rng, k, weight_range):
    lo, hi = weight_range
    return rng.integers(lo, hi + 1, size=k)


def _er_pairs(rng, n, p):
    total = n * (n - 1) // 2
    k = rng.binomial(total, p)
    idx = np.sort(rng.choice(total, size=k, replace=False)) if k else np.zeros(0, dtype=np.int64)
    # decode row-major upper-triangle index into (i, j), i < j
    i = (n - 2 - np.floor(np.sqrt(-8.0 * idx + 4.0 * n * (n - 1) - 7) / 2.0 - 0.5)).astype(np.int64)
    start = i * (2 * n - i - 1) // 2
    j = idx - start + i + 1
    # guard against float error at row boundaries
    fix = j >= n
    while fix.any():
        i[fix] += 1
        start = i * (2 * n - i - 1) // 2
        j = idx - start + i + 1
        fix = j >= n
    fix = j <= i
    while fix.any():
        i[fix] -= 1
        start = i * (2 * n - i - 1) // 2
        j = idx - start + i + 1
        fix = j <= i
    return i, j


def _sample(n, model, rng, params):
    if model == "path":
        a = np.arange(n - 1)
        return a, a + 1
    if model == "grid":
        cols = int(math.ceil(math.sqrt(n)))
        ids = np.arange(n)
        right = ids[(ids % cols != cols - 1) & (ids + 1 < n)]
        down = ids[ids + cols < n]
        return np.concatenate([right, down]), np.concatenate([right + 1, down + cols])
    if model == "erdos-renyi":
        p = params.get("p") or min(1.0, 2 * math.log(max(n, 2)) / n)
        return _er_pairs(rng, n, p)
    if model == "random-geometric":
        from scipy.spatial import cKDTree

        r = params.get("r") or math.sqrt(2.5 * math.log(max(n, 2)) / (math.pi * n))
        pts = rng.random((n, 2))
        pairs = cKDTree(pts).query_pairs(r, output_type="ndarray")
        if len(pairs) == 0:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        return pairs[:, 0], pairs[:, 1]
    if model == "lollipop":
        # dense random core followed by a long tail hanging off node core-1
        tail = int(params.get("tail") or n // 4)
        core = n - tail
        if core < 2:
            raise GraphError("lollipop core too small")
        p = params.get("p") or min(1.0, 3 * math.log(core) / core)
        a, b = _er_pairs(rng, core, p)
        t = np.arange(core - 1, n - 1)
        return np.concatenate([a, t]), np.concatenate([b, t + 1])
    raise GraphError(f"unknown model {model!r}")


def gen_random_graph(
    n: int,
    model: str = "erdos-renyi",
    weight_range=(1, 1),
    seed: int = 0,
    max_retries: int = 50,
    W: Optional[int] = None,
    **params,
) -> WeightedGraph:
    """Deterministic connected sample; disconnected draws are redrawn with seed (seed, attempt)."""
    if n < 1:
        raise GraphError("n must be >= 1")
    lo, hi = weight_range
    if lo < 1 or hi < lo:
        raise GraphError("bad weight range")
    for attempt in range(max_retries):
        rng = np.random.default_rng([seed, attempt])
        a, b = _sample(n, model, rng, params)
        w = _weights(rng, len(a), weight_range)
        g = WeightedGraph.from_edges(n, np.stack([a, b, w], axis=1) if len(a) else [], W=W or max(n * n, hi))
        if g.is_connected():
            return g
    raise GraphError(f"no connected {model} sample after {max_retries} draws")


def lower_bound_params(n: int, p: float):
    y = n // 4
    L = int(math.floor(math.sqrt(p * n) / math.log2(n))) if n > 1 else 0
    x = n - 2 * y - 1
    return y, L, x


def gen_lower_bound_graph(n: int, p: float, seed: int = 0):
    """Fooling-set instance: path a..b..c with |S_b| = |S_c| = n//4 leaves on b and c.

    Returns (graph, roles, info). Identifiers 0..2y-1 go to S_b and S_c: each of
    the first y is given by a fair coin to the next free S_b or S_c slot, the
    rest fill the remaining slots. Path nodes take 2y..n-1 in order from a.
    """
    if not 0 < p <= 1:
        raise GraphError("p must be in (0, 1]")
    y, L, x = lower_bound_params(n, p)
    if y < 1 or L < 1 or L >= x:
        raise GraphError(f"infeasible lower-bound instance for n={n}, p={p}")
    rng = np.random.default_rng(seed)
    a = 2 * y
    b = a + L
    c = n - 1
    sb, sc = [], []
    for ident in range(y):
        side = sb if rng.random() < 0.5 else sc
        if len(side) == y:
            side = sc if side is sb else sb
        side.append(ident)
    rest = iter(range(y, 2 * y))
    while len(sb) < y:
        sb.append(next(rest))
    while len(sc) < y:
        sc.append(next(rest))
    edges = [(i, i + 1, 1) for i in range(a, c)]
    edges += [(s, b, 1) for s in sb]
    edges += [(s, c, 1) for s in sc]
    g = WeightedGraph.from_edges(n, edges, W=max(n * n, 1))
    roles = ["path"] * n
    for s in sb:
        roles[s] = "S_b"
    for s in sc:
        roles[s] = "S_c"
    roles[a], roles[b], roles[c] = "a", "b", "c"
    info = {"y": y, "L": L, "x": x, "a": a, "b": b, "c": c, "S_b": sorted(sb), "S_c": sorted(sc)}
    return g, roles, info


# ---------------------------------------------------------------------------
# text formats


def write_graph(g: WeightedGraph, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{g.n} {g.m}\n")
        for a, b, w in g.edges:
            fh.write(f"{a} {b} {w}\n")


def read_graph(path, W: Optional[int] = None) -> WeightedGraph:
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    if not lines or len(lines[0]) != 2:
        raise GraphError("first line must be 'n m'")
    n, m = int(lines[0][0]), int(lines[0][1])
    body = lines[1:]
    if len(body) != m:
        raise GraphError(f"expected {m} edge lines, found {len(body)}")
    edges = []
    for i, parts in enumerate(body, start=2):
        if len(parts) != 3:
            raise GraphError(f"line {i}: expected 'u v w'")
        edges.append(tuple(int(t) for t in parts))
    return WeightedGraph.from_edges(n, edges, W=W)


def write_roles(roles, path) -> None:
    with open(path, "w") as fh:
        for i, r in enumerate(roles):
            fh.write(f"{i} {r}\n")


def read_roles(path) -> list:
    out = {}
    with open(path) as fh:
        for ln in fh:
            if ln.strip():
                i, r = ln.split()
                out[int(i)] = r
    return [out[i] for i in range(len(out))]
