"""Skeleton graphs: sampled marks joined by h-hop-limited distances."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.sparse.csgraph import shortest_path as sp_shortest_path

from .graph import INF, WeightedGraph
from .hopcalc import OffsetSolver, hop_rows
from .sim import HybridConfig, Network, NodeProgram, run_hybrid


def h_for(n: int, x: float, h_const: float = 2.0) -> int:
    return max(1, math.ceil(h_const * n ** (1 - x) * math.log(max(n, 2))))


def mark_probability(n: int, x: float) -> float:
    return min(1.0, n ** (x - 1))


def sample_marks(n: int, x: float, rng: np.random.Generator, force=None) -> np.ndarray:
    """Each node marked independently with probability n^(x-1); `force` nodes always included."""
    if not 0 < x <= 1:
        raise ValueError("x must be in (0, 1]")
    marked = rng.random(n) < mark_probability(n, x)
    if force is not None:
        marked[np.atleast_1d(np.asarray(force, dtype=np.int64))] = True
    return np.flatnonzero(marked)


@dataclass(eq=False)
class SkeletonGraph:
    g: WeightedGraph
    x: float
    h: int
    marks: np.ndarray  # sorted node ids; index i <-> marks[i]
    dist: np.ndarray  # (m, m) h-hop distances, inf when farther than h hops
    router: object = None
    _graph: Optional[WeightedGraph] = field(default=None, repr=False)
    _adj: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return len(self.marks)

    @property
    def index(self) -> np.ndarray:
        idx = np.full(self.g.n, -1, dtype=np.int64)
        idx[self.marks] = np.arange(self.m)
        return idx

    @property
    def adjacency(self) -> np.ndarray:
        if self._adj is None:
            adj = np.isfinite(self.dist)
            np.fill_diagonal(adj, False)
            adj.flags.writeable = False
            self._adj = adj
        return self._adj

    @property
    def neighbors(self) -> list:
        return [np.flatnonzero(row) for row in self.adjacency]

    @property
    def degree(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @property
    def edges(self) -> list:
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(i.tolist(), j.tolist(), self.dist[i, j].astype(np.int64).tolist()))

    @property
    def graph(self) -> WeightedGraph:
        """The skeleton as a graph over mark indices."""
        if self._graph is None:
            e = self.edges
            wmax = max((w for _, _, w in e), default=1)
            self._graph = WeightedGraph.from_edges(max(self.m, 1), e, W=max(self.m * self.m, wmax, 1))
        return self._graph


def build_skeleton(
    g: WeightedGraph,
    marks,
    x: float,
    h_const: float = 2.0,
    net: Optional[Network] = None,
    engine: str = "bulk",
    h: Optional[int] = None,
    phase: str = "skeleton",
) -> SkeletonGraph:
    """Every mark learns its virtual edges by h rounds of (mark, distance) flooding.

    engine="bulk" computes the flooding outcome centrally (exact h-hop
    distances) and charges h local rounds; engine="programs" runs the flooding
    as per-node programs in the round executor.
    """
    marks = np.unique(np.asarray(marks, dtype=np.int64))
    h = h if h is not None else h_for(g.n, x, h_const)
    m = len(marks)
    if engine == "bulk":
        if m:
            rows, _ = hop_rows(g, marks, h)
            dist = rows[:, marks]
        else:
            dist = np.zeros((0, 0))
        if net is not None:
            net.local(phase, h)
    elif engine == "programs":
        dist = _flood_programs(g, marks, h, net)
    else:
        raise ValueError(f"unknown engine {engine!r}")
    return SkeletonGraph(g, x, h, marks, dist)


class _MarkFlood(NodeProgram):
    """Distributed Bellman-Ford from all marks at once, keeping the best value per mark."""

    def __init__(self, node, adjacency, is_mark, rounds):
        super().__init__(node)
        self.adj = adjacency
        self.rounds = rounds
        self.best = {node: 0} if is_mark else {}
        self.changed = dict(self.best)

    def _absorb(self, delivered):
        self.changed = {}
        for e in delivered:
            src, d = e.payload
            if d < self.best.get(src, INF):
                self.best[src] = d
                self.changed[src] = d

    def step(self, rnd, delivered):
        if rnd > 0:
            self._absorb(delivered)
        sends = []
        for src, d in sorted(self.changed.items()):
            for nb, w in self.adj:
                sends.append(self.local(nb, src, d + w))
        return sends, rnd + 1 >= self.rounds

    def finish(self, delivered):
        self._absorb(delivered)


def _flood_programs(g, marks, h, net):
    is_mark = np.zeros(g.n, dtype=bool)
    is_mark[marks] = True
    progs = [_MarkFlood(v, g.adjacency[v], bool(is_mark[v]), h) for v in range(g.n)]
    cfg = net.cfg if net is not None else HybridConfig()
    ledger = net.ledger if net is not None else None
    run_hybrid(g, progs, cfg, max_rounds=h, phase="skeleton", ledger=ledger)
    m = len(marks)
    dist = np.full((m, m), INF)
    for i, v in enumerate(marks.tolist()):
        for j, u in enumerate(marks.tolist()):
            dist[i, j] = progs[v].best.get(u, INF)
    return dist


# ---------------------------------------------------------------------------
# verification


@dataclass
class SkeletonPropertyReport:
    connected: bool
    distance_preserving: bool
    coverage: bool
    size_ok: bool
    witnesses: list = field(default_factory=list)

    @property
    def all_ok(self) -> bool:
        return self.connected and self.distance_preserving and self.coverage and self.size_ok

    def to_text(self) -> str:
        return (
            "{"
            f'"connected": {str(self.connected).lower()}, '
            f'"distancePreserving": {str(self.distance_preserving).lower()}, '
            f'"coverage": {str(self.coverage).lower()}, '
            f'"sizeOk": {str(self.size_ok).lower()}, '
            f'"witnesses": {len(self.witnesses)}'
            "}"
        )


def size_bound(n: int, x: float) -> float:
    return 2 * n**x * math.log(max(n, 2))


def verify_properties(g: WeightedGraph, skel: SkeletonGraph, max_witnesses: int = 10) -> SkeletonPropertyReport:
    """Centralized check of connectivity, distance preservation, path coverage and size.

    Distances come from scipy's all-pairs routines, independent of the code
    that built the skeleton.
    """
    wit = []
    m = skel.m
    marks = skel.marks
    d_g = sp_shortest_path(g.csr(), method="D", directed=False)

    if m == 0:
        connected = False
        wit.append(("connected", "no marks"))
    else:
        k, _ = connected_components(np.isfinite(skel.dist) & ~np.eye(m, dtype=bool), directed=False)
        connected = k == 1
        if not connected:
            wit.append(("connected", f"{k} components"))

    dp = True
    if m:
        w = np.where(np.isfinite(skel.dist), skel.dist, 0)
        d_s = sp_shortest_path(w, method="D", directed=False) if m > 1 else np.zeros((1, 1))
        bad = np.argwhere(d_s != d_g[np.ix_(marks, marks)])
        if len(bad):
            dp = False
            for i, j in bad[:max_witnesses]:
                wit.append(("distance", int(marks[i]), int(marks[j]), float(d_s[i, j]), float(d_g[marks[i], marks[j]])))

    cov, cov_wit = _coverage(g, marks, skel.h, d_g)
    wit.extend(cov_wit[:max_witnesses])
    size_ok = m <= size_bound(g.n, skel.x)
    if not size_ok:
        wit.append(("size", m, size_bound(g.n, skel.x)))
    return SkeletonPropertyReport(connected, dp, cov, size_ok, wit)


def _coverage(g, marks, h, d_g):
    """For each pair with hop distance >= h: does some shortest path have no h consecutive unmarked nodes?

    Dynamic program over each source's shortest-path DAG: r[s, v] is the
    smallest possible length of the trailing unmarked run at v over shortest
    s-v paths whose runs all stay below h (inf if none exists).
    """
    n = g.n
    hop = sp_shortest_path(g.csr(np.ones(g.m)), method="D", directed=False, unweighted=True)
    need = (hop >= h) & np.isfinite(hop)
    if not need.any():
        return True, []
    is_mark = np.zeros(n, dtype=bool)
    is_mark[marks] = True
    src, dst, w, starts, heads = g.arcs()
    rows = np.flatnonzero(need.any(axis=1))
    bad = []
    for chunk in np.array_split(rows, max(1, len(rows) // 256)):
        d = d_g[chunk]
        tight = d[:, src] + w[None, :] == d[:, dst]
        r = np.full((len(chunk), n), INF)
        start = np.where(is_mark[chunk], 0.0, 1.0)
        start[start >= h] = INF
        r[np.arange(len(chunk)), chunk] = start
        while True:
            cand = np.where(tight, r[:, src] + 1, INF)
            best = np.full((len(chunk), n), INF)
            best[:, heads] = np.minimum.reduceat(cand, starts, axis=1)
            best = np.where(is_mark[None, :], np.where(np.isfinite(best), 0, INF), best)
            best[best >= h] = INF
            best[np.arange(len(chunk)), chunk] = r[np.arange(len(chunk)), chunk]
            new = np.minimum(r, best)
            if np.array_equal(new, r):
                break
            r = new
        fail = need[chunk] & ~np.isfinite(r)
        for i, v in zip(*np.nonzero(fail)):
            bad.append(("coverage", int(chunk[i]), int(v)))
    return len(bad) == 0, bad


# ---------------------------------------------------------------------------
# extension to all nodes


def extend_distances(
    g: WeightedGraph,
    skel: SkeletonGraph,
    sources,
    estimates: np.ndarray,
    net: Optional[Network] = None,
    exact_formula: bool = False,
    phase: str = "extend",
) -> np.ndarray:
    """Per-node estimates d~(u, s) for every node u and source s.

    d~(u, s) = min( d^h(u, s), min over marks v of d^h(u, v) + estimates[v, s] ).
    Costs h rounds of local flooding. `estimates` has shape (m, len(sources)).

    By default columns are first checked against a certificate: when every
    node has a shortest path to s with at most h hops, d^h(s, .) = d(s, .),
    which is also the value of the formula as long as the estimates never
    underestimate. Other columns (or all, with exact_formula=True) evaluate
    the formula directly.
    """
    sources = np.asarray(sources, dtype=np.int64).reshape(-1)
    est = np.asarray(estimates, dtype=np.float64).reshape(skel.m, len(sources))
    out = np.empty((g.n, len(sources)))
    if net is not None:
        net.local(phase, skel.h)
    if len(sources) == 0:
        return out
    todo = np.arange(len(sources))
    if not exact_formula:
        rows, cert = hop_rows(g, sources, skel.h)
        full = cert.all(axis=1)
        out[:, full] = rows[full].T
        todo = np.flatnonzero(~full)
    if len(todo):
        init = np.full((g.n, len(todo)), INF)
        init[skel.marks, :] = est[:, todo]
        init[sources[todo], np.arange(len(todo))] = 0
        out[:, todo] = OffsetSolver(g, skel.h).solve(init)
    return out
