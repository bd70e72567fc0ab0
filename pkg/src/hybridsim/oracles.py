"""Oracle and tiered-oracle models: abstract one-round executors and their hybrid simulations.

In the oracle model a single node (the one with the largest degree, ties to
the larger id) exchanges deg(v) words with every v in one round. In the tiered
model every v broadcasts deg(v) words to all u with deg(u) >= deg(v)/2.

Messages are opaque to the simulations: they route handles (sender, message
index) and the content is looked up in the spec afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .comm import aggregate_and_broadcast, cc_sim_round, local_sim_round, router_for
from .sim import Network

TO_ORACLE = "to-oracle"
FROM_ORACLE = "from-oracle"


class BudgetExceeded(ValueError):
    pass


def select_oracle(degree) -> int:
    """argmax over (degree, id)."""
    degree = np.asarray(degree)
    if len(degree) == 0:
        raise ValueError("empty node set")
    best = degree.max()
    return int(np.flatnonzero(degree == best)[-1])


@dataclass
class OracleRoundSpec:
    """outbox[v] is the list of messages v sends to the oracle (TO_ORACLE), or
    the list the oracle sends to v (FROM_ORACLE)."""

    outbox: dict
    direction: str = TO_ORACLE


@dataclass
class OracleDelivery:
    oracle: int
    direction: str
    messages: dict  # TO_ORACLE: sender -> list at the oracle; FROM_ORACLE: receiver -> list


def _check_budgets(outbox, degree):
    for v, msgs in outbox.items():
        if len(msgs) > degree[v]:
            raise BudgetExceeded(f"node {v} has {len(msgs)} messages but degree {degree[v]}")


def oracle_model_round(spec: OracleRoundSpec, degree) -> OracleDelivery:
    """Abstract executor: one round, budgets checked, everything delivered."""
    degree = np.asarray(degree)
    if spec.direction not in (TO_ORACLE, FROM_ORACLE):
        raise ValueError(f"bad direction {spec.direction!r}")
    _check_budgets(spec.outbox, degree)
    ell = select_oracle(degree)
    msgs = {v: list(m) for v, m in spec.outbox.items() if m}
    return OracleDelivery(ell, spec.direction, msgs)


@dataclass
class _OracleSetup:
    oracle: int
    oracle_neighbors: np.ndarray


def _oracle_setup(net: Network, skel, phase) -> _OracleSetup:
    """Degrees, then neighbor-of-oracle flags, are broadcast by Congested Clique rounds (once per skeleton)."""
    cached = getattr(skel, "_oracle_setup", None)
    if cached is not None:
        return cached
    m = skel.m
    ii, jj = np.nonzero(~np.eye(m, dtype=bool))
    cc_sim_round(net, skel, ii, jj, phase)  # degrees
    ell = select_oracle(skel.degree)
    cc_sim_round(net, skel, ii, jj, phase)  # "I am a neighbor of the oracle"
    setup = _OracleSetup(ell, np.flatnonzero(skel.adjacency[ell]))
    skel._oracle_setup = setup
    return setup


def simulate_oracle_round_in_hybrid(net: Network, skel, spec: OracleRoundSpec, phase="oracle-sim") -> OracleDelivery:
    """One oracle-model round over the skeleton (mark indices), realized in the hybrid network.

    TO_ORACLE: v's i-th message goes to the oracle's i-th neighbor by a
    Congested Clique round, then one LOCAL round on the skeleton brings it to
    the oracle. FROM_ORACLE runs the same path backwards.
    """
    degree = skel.degree
    _check_budgets(spec.outbox, degree)
    if skel.m == 0:
        raise ValueError("empty skeleton")
    router_for(net, skel)
    st = _oracle_setup(net, skel, phase)
    ell, nbrs = st.oracle, st.oracle_neighbors
    # handles (sender or receiver, message index)
    pairs = [(v, i) for v, msgs in sorted(spec.outbox.items()) for i in range(len(msgs))]
    owner = np.array([p[0] for p in pairs], dtype=np.int64)
    idx = np.array([p[1] for p in pairs], dtype=np.int64)
    relay = nbrs[idx] if len(idx) else idx
    if spec.direction == TO_ORACLE:
        _relay_cc(net, skel, owner, relay, phase)
        local_sim_round(net, skel, None, phase)
    elif spec.direction == FROM_ORACLE:
        local_sim_round(net, skel, None, phase)
        _relay_cc(net, skel, relay, owner, phase)
    else:
        raise ValueError(f"bad direction {spec.direction!r}")
    got = {}
    for (v, i), r in zip(pairs, relay.tolist()):
        # the relay must be a skeleton neighbor of the oracle (or the oracle itself)
        assert r == ell or skel.adjacency[ell, r]
        got.setdefault(v, []).append(spec.outbox[v][i])
    return OracleDelivery(ell, spec.direction, got)


def _relay_cc(net, skel, src, dst, phase):
    keep = src != dst
    cc_sim_round(net, skel, src[keep], dst[keep], phase)


# ---------------------------------------------------------------------------
# tiered oracles


def tier_of(degree) -> np.ndarray:
    """floor(log2 deg); isolated nodes go to tier 0."""
    degree = np.asarray(degree, dtype=np.int64)
    t = np.zeros(len(degree), dtype=np.int64)
    pos = degree > 0
    t[pos] = np.floor(np.log2(degree[pos])).astype(np.int64)
    return t


def receivers_mask(degree) -> np.ndarray:
    """R[v, u] is True when u receives M_v, i.e. 2*deg(u) >= deg(v)."""
    degree = np.asarray(degree, dtype=np.int64)
    return 2 * degree[None, :] >= degree[:, None]


@dataclass
class TieredRoundSpec:
    """sizes[v] = |M_v|; `broadcasts` optionally holds the message lists themselves."""

    sizes: np.ndarray
    broadcasts: Optional[list] = None

    @classmethod
    def from_broadcasts(cls, broadcasts):
        return cls(np.array([len(b) for b in broadcasts], dtype=np.int64), list(broadcasts))


@dataclass
class TieredDelivery:
    """Who got which broadcast. `covered[v]` is a boolean row over receivers."""

    covered: np.ndarray  # (m, m): covered[v, u] -> u received all of M_v
    contract_ok: bool
    attempts: int = 1
    holders: Optional[list] = field(default=None, repr=False)

    def received(self, u: int) -> np.ndarray:
        return np.flatnonzero(self.covered[:, u])


def tiered_model_round(spec: TieredRoundSpec, degree) -> TieredDelivery:
    degree = np.asarray(degree, dtype=np.int64)
    if np.any(spec.sizes > degree):
        v = int(np.flatnonzero(spec.sizes > degree)[0])
        raise BudgetExceeded(f"node {v} broadcasts {spec.sizes[v]} messages but has degree {degree[v]}")
    cov = receivers_mask(degree)
    return TieredDelivery(cov, True, 1)


def replication(m: int, degree, sampler_const: float = 2.0) -> np.ndarray:
    """Copies per message: min(m, ceil(c * 2 * m * ln m / deg))."""
    degree = np.asarray(degree, dtype=np.float64)
    if m < 2:
        return np.zeros(len(degree), dtype=np.int64)
    with np.errstate(divide="ignore"):
        x = np.ceil(sampler_const * 2 * m * math.log(m) / degree)
    x[~np.isfinite(x)] = m
    return np.minimum(m, x).astype(np.int64)


def simulate_tiered_round_in_hybrid(
    net: Network,
    skel,
    spec: TieredRoundSpec,
    sampler_const: float = 2.0,
    phase: str = "tiered-sim",
    max_attempts: int = 5,
    keep_holders: bool = False,
) -> TieredDelivery:
    """One tiered round over the skeleton.

    Degrees are broadcast by one Congested Clique round (once per skeleton).
    Each message of M_v goes to xRep marks sampled uniformly with replacement;
    one LOCAL round then lets every mark collect the copies held in its closed
    skeleton neighborhood. A completeness aggregate checks the delivery
    contract; a failed attempt is redone with fresh randomness, every attempt
    charged.
    """
    m = skel.m
    degree = skel.degree.astype(np.int64)
    if np.any(spec.sizes > degree):
        v = int(np.flatnonzero(spec.sizes > degree)[0])
        raise BudgetExceeded(f"node {v} broadcasts {spec.sizes[v]} messages but has degree {degree[v]}")
    if m <= 1:
        return TieredDelivery(np.ones((m, m), dtype=bool), True, 1)
    router = router_for(net, skel)
    if not getattr(skel, "_degrees_known", False):
        ii, jj = np.nonzero(~np.eye(m, dtype=bool))
        cc_sim_round(net, skel, ii, jj, phase)
        skel._degrees_known = True
    closed = skel.adjacency | np.eye(m, dtype=bool)
    want = receivers_mask(degree)
    xrep = replication(m, degree, sampler_const)
    full = closed.all(axis=1)
    for attempt in range(max_attempts):
        rng = net.rng("tiered", m, attempt)
        counts = np.zeros((m, m), dtype=np.int64)
        covered = np.ones((m, m), dtype=bool)
        holders = [] if keep_holders else None
        for v in range(m):
            k = int(spec.sizes[v])
            if k == 0:
                continue
            tgt = rng.integers(0, m, size=(k, int(xrep[v])))
            counts[v] += np.bincount(tgt.ravel(), minlength=m)
            if keep_holders:
                holders.append((v, tgt))
            if full[v]:
                continue  # v's own copy already reaches every mark
            # per message: marks whose closed neighborhood holds a copy (v itself holds all)
            easy = full[tgt].any(axis=1)
            hard = tgt[~easy]
            if len(hard):
                cov = closed[hard].any(axis=1) | closed[v][None, :]
                covered[v] &= cov.all(axis=0)
        router.route_counts(net, counts, phase)
        local_sim_round(net, skel, None, phase)
        bad = (want & ~covered).any(axis=0)  # receivers missing something
        flags = np.zeros(net.n, dtype=np.int64)
        flags[skel.marks] = bad
        fail = aggregate_and_broadcast(net, flags, np.maximum, phase="agg")
        if fail[0] == 0:
            return TieredDelivery(covered, True, attempt + 1, holders)
    return TieredDelivery(covered, False, max_attempts, holders)


# ---------------------------------------------------------------------------
# transports used by the algorithms


class AbstractTransport:
    """Counts abstract model rounds; no hybrid network underneath."""

    def __init__(self, degree):
        self.degree = np.asarray(degree)
        self.oracle_rounds = 0
        self.tiered_rounds = 0
        self.cc_rounds = 0

    def oracle_round(self, spec: OracleRoundSpec) -> OracleDelivery:
        self.oracle_rounds += 1
        return oracle_model_round(spec, self.degree)

    def tiered_round(self, spec: TieredRoundSpec) -> TieredDelivery:
        self.tiered_rounds += 1
        return tiered_model_round(spec, self.degree)

    def cc_round(self, src, dst) -> None:
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        keep = src != dst
        if len(np.unique(src[keep] * len(self.degree) + dst[keep])) != int(keep.sum()):
            from .comm import PayloadTooLarge

            raise PayloadTooLarge("more than one word for an ordered pair")
        self.cc_rounds += 1


class HybridTransport(AbstractTransport):
    """Runs model rounds over a skeleton inside the hybrid network."""

    def __init__(self, net: Network, skel, sampler_const: float = 2.0):
        super().__init__(skel.degree)
        self.net = net
        self.skel = skel
        self.sampler_const = sampler_const
        self.tiered_attempts = 0

    def oracle_round(self, spec):
        self.oracle_rounds += 1
        return simulate_oracle_round_in_hybrid(self.net, self.skel, spec)

    def tiered_round(self, spec):
        self.tiered_rounds += 1
        out = simulate_tiered_round_in_hybrid(self.net, self.skel, spec, self.sampler_const)
        self.tiered_attempts += out.attempts
        return out

    def cc_round(self, src, dst):
        self.cc_rounds += 1
        cc_sim_round(self.net, self.skel, src, dst, "cc-sim")
