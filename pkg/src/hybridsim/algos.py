"""End-to-end distance algorithms in the hybrid model.

Each public entry point builds a `Network` session, runs the protocol with
seeded retries on w.h.p. failures, and returns an `Outcome` carrying the
result together with the round ledger. Node-local computations are done
centrally; every communication step is charged through the primitives in
`comm`, `skeleton` and `oracles`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.sparse.csgraph import dijkstra as sp_dijkstra
from scipy.sparse.csgraph import floyd_warshall

from .comm import aggregate_and_broadcast, cc_sim_rounds, token_dissemination
from .graph import INF, WeightedGraph
from .hopcalc import OffsetSolver, hop_counts, hop_rows
from .oracles import (
    FROM_ORACLE,
    TO_ORACLE,
    AbstractTransport,
    HybridTransport,
    OracleRoundSpec,
    TieredRoundSpec,
    tier_of,
)
from .sim import HybridConfig, Network
from .skeleton import SkeletonGraph, build_skeleton, extend_distances, sample_marks

SKELETON_X = 2 / 3


class RetryableError(RuntimeError):
    """A w.h.p. event failed; the phase is rerun with a derived seed."""


class SkeletonDisconnected(RetryableError):
    pass


class TieredFailure(RetryableError):
    pass


class AssignmentDeficit(RetryableError):
    pass


class RepresentativeMissing(RetryableError):
    pass


class RetriesExhausted(RuntimeError):
    pass


@dataclass
class Outcome:
    value: object
    net: Network
    retries: int = 0
    sources: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    @property
    def rounds(self) -> int:
        return self.net.ledger.total_rounds


@dataclass
class Context:
    net: Network
    attempt: int = 0
    h_const: float = 2.0
    sampler_const: float = 2.0

    def rng(self, *tags) -> np.random.Generator:
        return self.net.rng(*tags, "attempt", self.attempt)


def _session(g, seed, cfg, net):
    if net is not None:
        return net
    cfg = cfg or HybridConfig(seed=seed)
    return Network(g, cfg)


def run_with_retries(g, body: Callable, seed=0, cfg=None, net=None, h_const=2.0, sampler_const=2.0, max_retries=5):
    """Run body(ctx) until it succeeds; every attempt's rounds stay on the ledger."""
    net = _session(g, seed, cfg, net)
    for attempt in range(max_retries + 1):
        ctx = Context(net, attempt, h_const, sampler_const)
        try:
            value, sources, info = body(ctx)
        except RetryableError as exc:
            last = exc
            continue
        return Outcome(value, net, attempt, sources, info)
    raise RetriesExhausted(f"{max_retries} retries exhausted: {last!r}")


# ---------------------------------------------------------------------------
# oracle SSSP and tiered APSP (run over any graph, usually a skeleton)


def oracle_sssp(g: WeightedGraph, s: int, transport=None) -> np.ndarray:
    """Exact SSSP in two oracle-model rounds.

    Every node sends its incident edges to the oracle, which solves SSSP
    locally and returns each node its distance.
    """
    transport = transport or AbstractTransport(g.degree)
    out = {v: [(v, u, w) for u, w in g.adjacency[v]] for v in range(g.n) if g.adjacency[v]}
    got = transport.oracle_round(OracleRoundSpec(out, TO_ORACLE))
    known = {}
    for msgs in got.messages.values():
        for a, b, w in msgs:
            known[(min(a, b), max(a, b))] = w
    local = WeightedGraph.from_edges(g.n, [(a, b, w) for (a, b), w in sorted(known.items())], W=g.W)
    dist = sp_dijkstra(local.csr(), directed=False, indices=s)
    reply = {v: [float(dist[v])] for v in range(g.n) if g.adjacency[v]}
    back = transport.oracle_round(OracleRoundSpec(reply, FROM_ORACLE))
    res = np.full(g.n, INF)
    for v, msgs in back.messages.items():
        res[v] = msgs[0]
    res[s] = 0.0
    return res


def _restricted_distances(g: WeightedGraph, allowed: np.ndarray, sources: np.ndarray) -> np.ndarray:
    """Distances using only edges with at least one endpoint in `allowed`, rows per source."""
    keep = allowed[g.u] | allowed[g.v]
    sub = WeightedGraph(g.n, g.u[keep], g.v[keep], g.w[keep], g.W, {})
    mat = sub.csr()
    if len(sources) * 4 > g.n:
        return floyd_warshall(mat, directed=False)[sources]
    return np.atleast_2d(sp_dijkstra(mat, directed=False, indices=sources))


def tiered_apsp(g: WeightedGraph, transport=None, instrument: Optional[Callable] = None) -> np.ndarray:
    """Exact APSP with one tiered-oracles round and one Congested Clique round per tier.

    Tier i holds the nodes with floor(log2 deg) = i. After the tiered round a
    node in tier i knows every edge touching tiers <= i. Iterating i from the
    top tier down, nodes of tier i compute their distances to tiers <= i using
    the restricted distances plus the already exact distances to higher tiers,
    then send them over one clique round. `instrument(i, table, tiers)` is
    called after each iteration.
    """
    n = g.n
    if n == 1:
        return np.zeros((1, 1))
    transport = transport or AbstractTransport(g.degree)
    degree = g.degree
    tiers = tier_of(degree)
    levels = math.ceil(math.log2(n))
    spec = TieredRoundSpec.from_broadcasts([[(v, u, w) for u, w in g.adjacency[v]] for v in range(n)])
    got = transport.tiered_round(spec)
    if not got.contract_ok:
        raise TieredFailure("tiered round missed its delivery contract")
    table = np.full((n, n), INF)
    np.fill_diagonal(table, 0.0)
    for i in range(levels - 1, -1, -1):
        here = np.flatnonzero(tiers == i)
        higher = np.flatnonzero(tiers > i)
        low = tiers <= i
        below = np.flatnonzero(low)
        if len(here):
            srcs = np.concatenate([here, higher])
            d = _restricted_distances(g, low, srcs)
            d_here = d[: len(here)][:, below]
            if len(higher):
                d_high = d[len(here) :][:, below]
                via = table[np.ix_(here, higher)]
                step = max(1, 4_000_000 // (len(higher) * len(below)))
                for a in range(0, len(here), step):
                    part = via[a : a + step]
                    best = (part[:, :, None] + d_high[None, :, :]).min(axis=1)
                    d_here[a : a + step] = np.minimum(d_here[a : a + step], best)
            table[np.ix_(here, below)] = d_here
        # one clique round: v in tier i tells every u in tiers <= i the value
        src, dst = np.meshgrid(here, below, indexing="ij")
        src, dst = src.ravel(), dst.ravel()
        sel = src != dst
        transport.cc_round(src[sel], dst[sel])
        if len(here):
            table[np.ix_(below, here)] = table[np.ix_(here, below)].T
        if instrument is not None:
            instrument(i, table, tiers)
    return table


def skeleton_apsp(ctx: Context, skel: SkeletonGraph) -> np.ndarray:
    """Tiered APSP over the skeleton, simulated in the hybrid network."""
    if skel.m <= 1:
        return np.zeros((skel.m, skel.m))
    transport = HybridTransport(ctx.net, skel, ctx.sampler_const)
    table = tiered_apsp(skel.graph, transport)
    _check_finite(ctx.net, skel, table)
    return table


def _check_finite(net: Network, skel: SkeletonGraph, table: np.ndarray):
    """Failure-flag aggregate: a mark with an infinite entry means the skeleton is disconnected."""
    flags = np.zeros(net.n, dtype=np.int64)
    flags[skel.marks] = ~np.isfinite(table).all(axis=1)
    if aggregate_and_broadcast(net, flags, np.maximum, phase="agg")[0]:
        raise SkeletonDisconnected("skeleton graph is disconnected")


# ---------------------------------------------------------------------------
# exact SSSP and random-source shortest paths


def hybrid_exact_sssp(g: WeightedGraph, s: int = 0, **kw) -> Outcome:
    """Exact SSSP: skeleton with s forced in, oracle SSSP on it, extension to all nodes."""

    def body(ctx):
        if g.n == 1:
            return np.zeros(1), np.array([s]), {}
        return _exact_sssp_body(ctx, g, s)

    return run_with_retries(g, body, **kw)


def _exact_sssp_body(ctx, g, s):
    net = ctx.net
    marks = sample_marks(g.n, SKELETON_X, ctx.rng("marks"), force=s)
    skel = build_skeleton(g, marks, SKELETON_X, ctx.h_const, net)
    si = int(skel.index[s])
    if skel.m == 1:
        est = np.zeros(1)
    else:
        transport = HybridTransport(net, skel, ctx.sampler_const)
        est = oracle_sssp(skel.graph, si, transport)
        _check_finite(net, skel, est[:, None])
    dist = extend_distances(g, skel, [s], est[:, None], net)[:, 0]
    return dist, np.array([s]), {"marks": skel.m, "h": skel.h}


def densify_probability(n: int, x: float) -> float:
    """Extra marking probability that lifts n^(x-1) to n^(-1/3)."""
    p = n ** (x - 1)
    q = n ** (-1 / 3)
    if p >= q:
        return 0.0
    return (q - p) / (1 - p)


def densify_marks(n: int, x: float, sources: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    extra = rng.random(n) < densify_probability(n, x)
    extra[sources] = True
    return np.flatnonzero(extra)


@dataclass
class RsspState:
    skel: SkeletonGraph
    table: np.ndarray  # exact distances among marks
    sources: np.ndarray
    dist: np.ndarray  # (n, len(sources))


def _rssp_body(ctx: Context, g: WeightedGraph, x: float, sources=None) -> RsspState:
    net, n = ctx.net, g.n
    if sources is None:
        sources = sample_marks(n, x, ctx.rng("rssp-sources"))
    if x < SKELETON_X:
        marks = densify_marks(n, x, sources, ctx.rng("densify"))
        sx = SKELETON_X
    else:
        marks, sx = sources, x
    if len(marks) == 0:
        raise SkeletonDisconnected("no marks sampled")
    skel = build_skeleton(g, marks, sx, ctx.h_const, net)
    table = skeleton_apsp(ctx, skel)
    est = table[:, skel.index[sources]]
    dist = extend_distances(g, skel, sources, est, net)
    return RsspState(skel, table, sources, dist)


def rssp(g: WeightedGraph, x: float, **kw) -> Outcome:
    """Exact distances from every node to the random sources drawn with probability n^(x-1)."""
    if not 0 < x < 1:
        raise ValueError("x must be in (0, 1)")

    def body(ctx):
        st = _rssp_body(ctx, g, x)
        return st.dist, st.sources, {"marks": st.skel.m, "h": st.skel.h}

    return run_with_retries(g, body, **kw)


# ---------------------------------------------------------------------------
# reassigning marks as helpers; exact SSSP from about n^(1/3) given sources


def reassign_skeletons(ctx: Context, skel: SkeletonGraph, members, k: int = 1, phase="reassign") -> dict:
    """Assign helper marks to each member of A.

    Every mark samples each member within h hops with probability k/|A| and
    tells it so. Returns {member: sorted array of helper node ids}.
    """
    net, g = ctx.net, skel.g
    members = np.asarray(members, dtype=bool)
    size = int(aggregate_and_broadcast(net, members.astype(np.int64), np.add, phase="agg")[0])
    net.local(phase, skel.h)  # marks learn their h-hop neighborhoods
    if size == 0:
        return {}
    a_nodes = np.flatnonzero(members)
    hops = hop_counts(g, a_nodes, skel.h)[:, skel.marks]  # (|A|, m)
    near = hops >= 0
    rng = ctx.rng("reassign")
    pick = near & (rng.random(near.shape) < min(1.0, k / size))
    net.local(phase, skel.h)  # marks inform the sampled members
    out = {}
    for r, a in enumerate(a_nodes.tolist()):
        helpers = skel.marks[pick[r]]
        if len(helpers) == 0:
            raise AssignmentDeficit(f"node {a} got no helper")
        out[a] = helpers
    return out


def helper_loads(assignment: dict) -> dict:
    """Number of members each helper mark serves."""
    loads = {}
    for helpers in assignment.values():
        for v in helpers.tolist():
            loads[v] = loads.get(v, 0) + 1
    return loads


def sparse_threshold(n: int, theta: float = 1.0) -> float:
    return theta * n ** (1 / 3) * math.log(max(n, 2))


def exact_n13_ssp(g: WeightedGraph, sources, theta: float = 1.0, **kw) -> Outcome:
    """Exact distances from a given set of about n^(1/3) sources.

    Sources with few marks in their h-hop neighborhood publish their h-hop
    distances to those marks by token dissemination; the others take over
    helper marks that forward exact distances over clique rounds. Marks then
    know exact distances to every source and the result is extended to all
    nodes.
    """
    sources = np.asarray(sources, dtype=np.int64).reshape(-1)

    def body(ctx):
        return _n13_body(ctx, g, sources, theta)

    return run_with_retries(g, body, **kw)


def _n13_body(ctx, g, sources, theta):
    net, n = ctx.net, g.n
    token_dissemination(net, sources, phase="td", tag=("sources", ctx.attempt))
    st = _rssp_body(ctx, g, SKELETON_X)
    skel = st.skel
    marks, m, h = skel.marks, skel.m, skel.h
    mark_dist = st.dist  # (n, m): exact d(v, mark)
    net.local("local", h)  # sources learn their h-hop neighborhoods
    hop_sm = hop_counts(g, sources, h)[:, marks] >= 0  # (k, m)
    dh, _ = hop_rows(g, sources, h)  # d^h(s, .)
    counts = hop_sm.sum(axis=1)
    sparse = counts <= sparse_threshold(n, theta)
    est = np.full((m, len(sources)), INF)

    # sparse sources: tokens <s, v', d^h(v', s)>
    sp_idx = np.flatnonzero(sparse)
    owners = np.repeat(sources[sp_idx], counts[sp_idx])
    token_dissemination(net, owners, phase="td", tag=("n13-tokens", ctx.attempt))
    for c in sp_idx.tolist():
        near = np.flatnonzero(hop_sm[c])
        tok = dh[c, marks[near]]
        via = (st.table[:, near] + tok[None, :]).min(axis=1) if len(near) else np.full(m, INF)
        est[:, c] = np.minimum(dh[c, marks], via)

    # dense sources: helpers forward d(s, v') over clique rounds
    dn_idx = np.flatnonzero(~sparse)
    members = np.zeros(n, dtype=bool)
    members[sources[dn_idx]] = True
    assignment = reassign_skeletons(ctx, skel, members)
    helper = {}
    if len(dn_idx):
        net.local("local", h)  # each dense source hands its distance list to its helper
        src, dst = [], []
        idx = skel.index
        for c in dn_idx.tolist():
            s = int(sources[c])
            hm = int(idx[assignment[s].min()])
            helper[s] = int(marks[hm])
            src.append(np.full(m, hm))
            dst.append(np.arange(m))
            est[:, c] = mark_dist[s]
        cc_sim_rounds(net, skel, np.concatenate(src), np.concatenate(dst), phase="cc-sim")
    dist = extend_distances(g, skel, sources, est, net)
    info = {
        "marks": m,
        "h": h,
        "sparse": int(sparse.sum()),
        "dense": int((~sparse).sum()),
        "helpers": helper,
    }
    return dist, sources, info


# ---------------------------------------------------------------------------
# approximations


def _eta(g: WeightedGraph, eps: float) -> float:
    return 2.0 / eps if g.unweighted else 1.0


def approx_mssp(g: WeightedGraph, sources, eps: float = 0.5, **kw) -> Outcome:
    """(1+eps)-approximate (unweighted) or 3-approximate (weighted) distances from given sources."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    sources = np.asarray(sources, dtype=np.int64).reshape(-1)

    def body(ctx):
        return _approx_body(ctx, g, sources, eps)

    return run_with_retries(g, body, **kw)


def _approx_body(ctx, g, sources, eps):
    net = ctx.net
    marks = sample_marks(g.n, SKELETON_X, ctx.rng("marks"))
    if len(marks) == 0:
        raise SkeletonDisconnected("no marks sampled")
    skel = build_skeleton(g, marks, SKELETON_X, ctx.h_const, net)
    table = skeleton_apsp(ctx, skel)
    h = skel.h
    dh, _ = hop_rows(g, sources, h)
    near = dh[:, marks]  # d^h(s, mark); first minimum is the smaller id
    if len(sources) and not np.isfinite(near).any(axis=1).all():
        raise RepresentativeMissing("a source has no mark within h hops")
    rep = near.argmin(axis=1) if len(sources) else np.zeros(0, dtype=np.int64)
    off = near[np.arange(len(sources)), rep]
    token_dissemination(net, sources, phase="td", tag=("reps", ctx.attempt))
    reach = math.ceil(_eta(g, eps) * h)
    net.local("local", reach)
    far, _ = hop_rows(g, sources, reach)
    init = np.full((g.n, len(sources)), INF)
    init[marks, :] = table[:, rep] + off[None, :]
    via = OffsetSolver(g, h).solve(init)
    dist = np.minimum(far.T, via)
    info = {"marks": skel.m, "h": h, "reach": reach, "representatives": marks[rep]}
    return dist, sources, info


def _farthest_within(g: WeightedGraph, radius: int) -> np.ndarray:
    """Largest hop distance to a node within `radius` hops, per node."""
    out = np.zeros(g.n)
    for a in range(0, g.n, 1024):
        part = np.arange(a, min(g.n, a + 1024))
        out[part] = hop_counts(g, part, radius).max(axis=1)
    return out


def ecc_unweighted(g: WeightedGraph, eps: float = 0.5, **kw) -> Outcome:
    """(1+eps)-approximate eccentricities of an unweighted graph, never overestimating."""
    if eps <= 0:
        raise ValueError("eps must be positive")

    def body(ctx):
        n = g.n
        if n == 1:
            return np.zeros(1), None, {}
        st = _rssp_body(ctx, g, SKELETON_X)
        radius = math.ceil((1 + 1 / eps) * st.skel.h)
        ctx.net.local("local", radius)
        far = _farthest_within(g, radius)
        to_marks = st.dist.max(axis=1) if st.dist.shape[1] else np.zeros(n)
        return np.maximum(to_marks, far), st.sources, {"marks": st.skel.m, "h": st.skel.h, "radius": radius}

    return run_with_retries(g, body, **kw)


def ecc_weighted(g: WeightedGraph, **kw) -> Outcome:
    """3-approximate eccentricities: (1/3) max over marks v of d(u, v) + ecc_h(v)."""

    def body(ctx):
        n = g.n
        if n == 1:
            return np.zeros(1), None, {}
        net = ctx.net
        st = _rssp_body(ctx, g, SKELETON_X)
        marks, h = st.sources, st.skel.h
        # each mark gathers the exact distances its h-hop neighbors hold
        net.local("local", h)
        within = hop_counts(g, marks, h) >= 0  # (m, n)
        ecc_h = np.where(within, st.dist.T, -INF).max(axis=1)
        token_dissemination(net, marks, phase="td", tag=("ecc-h", ctx.attempt))
        total = (st.dist + ecc_h[None, :]).max(axis=1)
        return total / 3.0, marks, {"marks": st.skel.m, "h": h}

    return run_with_retries(g, body, **kw)


def diameter_weighted(g: WeightedGraph, **kw) -> Outcome:
    """2-approximate diameter: max distance from the node with the smallest id."""
    res = hybrid_exact_sssp(g, 0, **kw)
    value = float(aggregate_and_broadcast(res.net, res.value, np.maximum, phase="agg")[0])
    return Outcome(value, res.net, res.retries, res.sources, res.info)


def diameter_unweighted(g: WeightedGraph, eps: float = 0.5, **kw) -> Outcome:
    """(1+eps)-approximate diameter of an unweighted graph."""
    res = ecc_unweighted(g, eps, **kw)
    value = float(aggregate_and_broadcast(res.net, res.value, np.maximum, phase="agg")[0])
    return Outcome(value, res.net, res.retries, res.sources, res.info)
