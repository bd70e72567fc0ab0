"""Bulk hop-limited distance computations used by the simulators.

The node-local work in the algorithms ("after h rounds of flooding every node
knows d^h to every source") is computed here centrally. Two routes exist:

* synchronous Bellman-Ford for h rounds (`relax_rounds`), exact by construction;
* a lexicographic Dijkstra on weights w*BIG + 1, which yields the exact
  distance together with the fewest hops among shortest paths. Whenever that
  hop count is <= h the h-hop distance equals the true distance. Entries that
  cannot be certified this way are recomputed with Bellman-Ford.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra as sp_dijkstra

from .graph import EXACT_LIMIT, INF, WeightedGraph, relax_rounds

CHUNK = 128


def lex_base(g: WeightedGraph) -> int:
    return g.n + 2


def _lex_csr(g: WeightedGraph):
    if "lex_csr" not in g._cache:
        big = lex_base(g)
        g._cache["lex_csr"] = g.csr(g.w.astype(np.float64) * big + 1.0)
    return g._cache["lex_csr"]


def lex_safe(g: WeightedGraph, offset: float = 0.0) -> bool:
    """True when every lex-encoded path length stays exactly representable in float64."""
    big = lex_base(g)
    heaviest = int(g.w.max()) if g.m else 1
    return (offset + (g.n - 1) * heaviest) * big + g.n < EXACT_LIMIT


def _split(lex: np.ndarray, big: int):
    fin = np.isfinite(lex)
    li = np.where(fin, lex, 0).astype(np.int64)
    dist, hops = np.divmod(li, big)
    dist = np.where(fin, dist.astype(np.float64), INF)
    hops = np.where(fin, hops, np.iinfo(np.int64).max)
    return dist, hops


def _hop_store(g, h):
    return g._cache.setdefault(("hop", h), {})


def exact_rows(g: WeightedGraph, sources) -> np.ndarray:
    """Unrestricted distances d(s, .) for each source, one row per source."""
    return hop_rows(g, sources, g.n)[0]


def hop_rows(g: WeightedGraph, sources, h: int):
    """Return (dist, cert) with dist[i, u] = d^h(sources[i], u).

    cert[i, u] is True when d^h equals the unrestricted distance, i.e. some
    shortest path between the two nodes uses at most h edges. Rows are cached
    on the graph per hop limit.
    """
    sources = np.asarray(sources, dtype=np.int64).reshape(-1)
    store = _hop_store(g, h)
    todo = [int(s) for s in dict.fromkeys(sources.tolist()) if int(s) not in store]
    if todo:
        if lex_safe(g):
            _fill_lex(g, todo, h, store)
        else:
            _fill_bf(g, todo, h, store)
    dist = np.empty((len(sources), g.n))
    cert = np.empty((len(sources), g.n), dtype=bool)
    for i, s in enumerate(sources.tolist()):
        dist[i], cert[i] = store[s]
    return dist, cert


def _fill_lex(g, todo, h, store):
    big = lex_base(g)
    mat = _lex_csr(g)
    for k in range(0, len(todo), CHUNK):
        part = todo[k : k + CHUNK]
        lex = sp_dijkstra(mat, directed=False, indices=part)
        dist, hops = _split(np.atleast_2d(lex), big)
        cert = hops <= h
        # nodes unreachable in g are trivially certified (inf == inf)
        cert |= ~np.isfinite(dist)
        bad = [i for i in range(len(part)) if not cert[i].all()]
        if bad:
            init = np.full((g.n, len(bad)), INF)
            init[[part[i] for i in bad], np.arange(len(bad))] = 0
            fixed = relax_rounds(g, init, h).T
            for j, i in enumerate(bad):
                row = np.where(cert[i], dist[i], fixed[j])
                dist[i] = row
        for i, s in enumerate(part):
            store[s] = (dist[i].copy(), cert[i].copy())


def _fill_bf(g, todo, h, store):
    for k in range(0, len(todo), CHUNK):
        part = todo[k : k + CHUNK]
        init = np.full((g.n, len(part)), INF)
        init[part, np.arange(len(part))] = 0
        limited = relax_rounds(g, init, h).T
        full = np.atleast_2d(sp_dijkstra(g.csr(), directed=False, indices=part))
        for i, s in enumerate(part):
            store[s] = (limited[i].copy(), limited[i] == full[i])


class OffsetSolver:
    """Computes min_v (init[v] + d^h(v, u)) for every u.

    Uses a Dijkstra from a virtual super-source joined to every v with a lex
    weight init[v]*BIG + 1. When the optimum is reached within h hops of the
    original graph the answer is exact; columns with any uncertified entry are
    redone by h rounds of Bellman-Ford.
    """

    def __init__(self, g: WeightedGraph, h: int):
        self.g = g
        self.h = h
        self.big = lex_base(g)
        self.bf_columns = 0

    def solve(self, init: np.ndarray) -> np.ndarray:
        init = np.asarray(init, dtype=np.float64)
        if init.ndim == 1:
            return self.solve(init[:, None])[:, 0]
        g, big = self.g, self.big
        out = np.empty_like(init)
        finite_max = init[np.isfinite(init)].max(initial=0.0)
        if not lex_safe(g, finite_max):
            self.bf_columns += init.shape[1]
            return relax_rounds(g, init, self.h)
        base = _lex_csr(g).tocoo()
        n = g.n
        redo = []
        for j in range(init.shape[1]):
            col = init[:, j]
            srcs = np.flatnonzero(np.isfinite(col))
            if len(srcs) == 0:
                out[:, j] = INF
                continue
            rows = np.concatenate([base.row, np.full(len(srcs), n)])
            cols = np.concatenate([base.col, srcs])
            data = np.concatenate([base.data, col[srcs] * big + 1.0])
            mat = sp.csr_matrix((data, (rows, cols)), shape=(n + 1, n + 1))
            lex = sp_dijkstra(mat, directed=True, indices=n)[:n]
            dist, hops = _split(lex, big)
            hops_after = hops - 1
            ok = ~np.isfinite(dist) | (hops_after <= self.h)
            out[:, j] = dist
            if not ok.all():
                redo.append(j)
        if redo:
            self.bf_columns += len(redo)
            out[:, redo] = relax_rounds(g, init[:, redo], self.h)
        return out


def hop_counts(g: WeightedGraph, sources, limit: int) -> np.ndarray:
    """Hop distance from each source to each node, -1 if farther than `limit`.

    Breadth-first search run for all sources at once on packed bitsets.
    Returns an int32 array of shape (len(sources), n).
    """
    sources = np.asarray(sources, dtype=np.int64).reshape(-1)
    k = len(sources)
    n = g.n
    out = np.full((k, n), -1, dtype=np.int32)
    if k == 0:
        return out
    out[np.arange(k), sources] = 0
    words = (k + 63) // 64
    reach = np.zeros((n, words), dtype=np.uint64)
    bit = np.arange(k)
    np.bitwise_or.at(reach, (sources, bit // 64), np.left_shift(np.uint64(1), (bit % 64).astype(np.uint64)))
    src, _, _, starts, heads = g.arcs()
    if len(src) == 0:
        return out
    for level in range(1, limit + 1):
        gathered = np.bitwise_or.reduceat(reach[src], starts, axis=0)
        new = gathered & ~reach[heads]
        if not new.any():
            break
        nodes = np.flatnonzero(new.any(axis=1))
        reach[heads[nodes]] |= new[nodes]
        bits = np.unpackbits(new[nodes].view(np.uint8), axis=1, bitorder="little")[:, :k]
        ni, si = np.nonzero(bits)
        out[si, heads[nodes][ni]] = level
    return out
