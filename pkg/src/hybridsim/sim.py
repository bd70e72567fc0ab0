"""Synchronous round executor for the hybrid model.

Two ways to drive a simulation share one capacity rule (`select_within_capacity`):

* `run_hybrid` steps a `NodeProgram` per node and moves real `Envelope`s;
* `Network` is a bulk session used by the algorithm layer. Protocols hand it
  arrays of global sends per round and a count of local flooding rounds; it
  applies the same budget/drop rule and keeps the same ledger.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .graph import WeightedGraph

LOCAL = "local"
GLOBAL = "global"
ADVERSARIES = ("drop-newest", "drop-oldest", "drop-random")


class SimError(RuntimeError):
    pass


class MaxRoundsExceeded(SimError):
    pass


class IllegalLocalEdge(SimError):
    pass


@dataclass(frozen=True)
class Envelope:
    sender: int
    receiver: int
    channel: str
    payload: tuple
    seq: int = 0

    @property
    def words(self) -> int:
        return max(1, len(self.payload))


@dataclass
class HybridConfig:
    gamma_const: float = 4.0
    lambda_bound: Optional[int] = None  # None: unbounded local bandwidth
    adversary: str = "drop-newest"
    seed: int = 0

    def __post_init__(self):
        if self.adversary not in ADVERSARIES:
            raise ValueError(f"unknown adversary {self.adversary!r}")
        if self.gamma_const < 0:
            raise ValueError("gamma_const must be >= 0")
        if self.gamma_const == 0 and self.lambda_bound is None:
            # a zero global budget only makes sense for the CONGEST reduction
            raise ValueError("gamma_const=0 requires a bounded local channel")

    def gamma(self, n: int) -> int:
        if self.gamma_const == 0:
            return 0
        return max(1, math.ceil(self.gamma_const * math.log2(max(n, 2))))


def congest_config(seed: int = 0) -> HybridConfig:
    return HybridConfig(gamma_const=0, lambda_bound=1, seed=seed)


def node_rng(seed: int, node: int) -> np.random.Generator:
    return np.random.default_rng([seed, node])


def tag_rng(seed: int, *tags) -> np.random.Generator:
    key = [seed & 0xFFFFFFFFFFFFFFFF]
    for t in tags:
        key.append(t if isinstance(t, int) and t >= 0 else zlib.crc32(str(t).encode()))
    return np.random.default_rng(key)


# ---------------------------------------------------------------------------
# capacity rule


def _prefix_within(groups, words, priority, budget):
    """Keep mask: per group, the longest prefix (in priority order) fitting `budget` words."""
    k = len(groups)
    keep = np.zeros(k, dtype=bool)
    if k == 0:
        return keep
    order = np.lexsort((priority, groups))
    g = groups[order]
    wd = words[order]
    csum = np.cumsum(wd)
    first = np.r_[True, g[1:] != g[:-1]]
    base = np.maximum.accumulate(np.where(first, csum - wd, 0))
    keep[order] = (csum - base) <= budget
    return keep


def select_within_capacity(src, dst, words, gamma, policy="drop-newest", rng=None):
    """Which global envelopes survive one round.

    Envelopes are given in delivery order (sender id, then sequence). Each node
    may send at most `gamma` words and receive at most `gamma` words; excess is
    dropped according to `policy`. Send budgets are applied first, receive
    budgets to the survivors. Returns a boolean keep mask.
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    k = len(src)
    words = np.ones(k, dtype=np.int64) if words is None else np.asarray(words, dtype=np.int64)
    if k == 0:
        return np.zeros(0, dtype=bool)
    if policy == "drop-newest":
        prio = np.arange(k)
    elif policy == "drop-oldest":
        prio = -np.arange(k)
    elif policy == "drop-random":
        if rng is None:
            raise ValueError("drop-random needs an rng")
        prio = rng.permutation(k)
    else:
        raise ValueError(f"unknown adversary {policy!r}")
    keep = _prefix_within(src, words, prio, gamma)
    idx = np.flatnonzero(keep)
    keep2 = _prefix_within(dst[idx], words[idx], prio[idx], gamma)
    out = np.zeros(k, dtype=bool)
    out[idx[keep2]] = True
    return out


# ---------------------------------------------------------------------------
# accounting


@dataclass
class PhaseStats:
    rounds: int = 0
    local_msgs: int = 0
    global_msgs: int = 0
    drops: int = 0


@dataclass
class RoundLedger:
    """Per-phase round and message counts.

    global_msgs counts delivered global words; drops counts words discarded by
    the adversary. max_global_in / max_global_out are the largest per-node,
    per-round global word counts seen after drops.
    """

    phases: dict = field(default_factory=dict)
    round: int = 0
    max_global_in: int = 0
    max_global_out: int = 0

    def record(self, phase, rounds=1, local_msgs=0, global_msgs=0, drops=0, max_in=0, max_out=0):
        st = self.phases.setdefault(phase, PhaseStats())
        st.rounds += int(rounds)
        st.local_msgs += int(local_msgs)
        st.global_msgs += int(global_msgs)
        st.drops += int(drops)
        self.round += int(rounds)
        self.max_global_in = max(self.max_global_in, int(max_in))
        self.max_global_out = max(self.max_global_out, int(max_out))

    @property
    def total_rounds(self) -> int:
        return self.round

    @property
    def drops(self) -> int:
        return sum(p.drops for p in self.phases.values())

    def rounds_of(self, *phases) -> int:
        return sum(self.phases[p].rounds for p in phases if p in self.phases)

    def csv_rows(self):
        for name, st in self.phases.items():
            yield [name, st.rounds, st.local_msgs, st.global_msgs, st.drops]

    def to_csv(self) -> str:
        lines = ["phase,rounds,localMsgs,globalMsgs,drops"]
        lines += [",".join(str(x) for x in row) for row in self.csv_rows()]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# per-node programs


class NodeProgram:
    """Base class for a node's state machine.

    Subclasses implement `step(rnd, delivered)` returning (sends, halt). The
    optional `finish(delivered)` hook receives the inbox that arrives after the
    last executed round (no extra round is charged for it).
    """

    def __init__(self, node: int):
        self.node = node
        self.rng: Optional[np.random.Generator] = None
        self.halted = False
        self.state: dict = {}

    def local(self, to, *payload) -> Envelope:
        return Envelope(self.node, to, LOCAL, tuple(payload))

    def send_global(self, to, *payload) -> Envelope:
        return Envelope(self.node, to, GLOBAL, tuple(payload))

    def step(self, rnd: int, delivered: list):
        raise NotImplementedError

    def finish(self, delivered: list) -> None:
        pass


def run_hybrid(
    g: WeightedGraph,
    programs,
    cfg: HybridConfig,
    max_rounds: int,
    phase: str = "run",
    ledger: Optional[RoundLedger] = None,
    transcript: Optional[list] = None,
    stop_after: Optional[int] = None,
):
    """Execute programs in lock-step until all halt (or `stop_after` rounds).

    Returns (programs, ledger). Raises MaxRoundsExceeded when programs are
    still running after `max_rounds` rounds.
    """
    n = g.n
    if len(programs) != n:
        raise ValueError("need exactly one program per node")
    ledger = ledger if ledger is not None else RoundLedger()
    gamma = cfg.gamma(n)
    adv_rng = tag_rng(cfg.seed, "adversary", phase)
    for v, p in enumerate(programs):
        p.rng = node_rng(cfg.seed, v)
    nbrs = [set(x for x, _ in lst) for lst in g.adjacency]
    inbox = [[] for _ in range(n)]
    rnd = 0
    while True:
        if stop_after is not None and rnd >= stop_after:
            break
        if all(p.halted for p in programs):
            break
        if rnd >= max_rounds:
            raise MaxRoundsExceeded(f"still running after {max_rounds} rounds")
        local_env, global_env = [], []
        for v in range(n):
            p = programs[v]
            if p.halted:
                continue
            sends, halt = p.step(rnd, inbox[v])
            for seq, e in enumerate(sends or ()):
                if e.sender != v:
                    raise SimError(f"node {v} forged sender {e.sender}")
                e = Envelope(v, e.receiver, e.channel, e.payload, seq)
                if e.channel == LOCAL:
                    if e.receiver not in nbrs[v]:
                        raise IllegalLocalEdge(f"{v} -> {e.receiver} is not an edge")
                    local_env.append(e)
                elif e.channel == GLOBAL:
                    if not 0 <= e.receiver < n:
                        raise SimError(f"bad receiver {e.receiver}")
                    global_env.append(e)
                else:
                    raise SimError(f"bad channel {e.channel!r}")
            p.halted = bool(halt)
        drops = 0
        if cfg.lambda_bound is not None and local_env:
            # a bounded local channel behaves like a per-edge budget of lambda words
            pair = np.array([e.sender * n + e.receiver for e in local_env])
            wl = np.array([e.words for e in local_env])
            keep = select_within_capacity(pair, pair, wl, cfg.lambda_bound, cfg.adversary, adv_rng)
            drops += int(wl[~keep].sum())
            local_env = [e for e, k in zip(local_env, keep) if k]
        delivered_global = []
        max_in = max_out = 0
        if global_env:
            gs = np.array([e.sender for e in global_env])
            gd = np.array([e.receiver for e in global_env])
            gw = np.array([e.words for e in global_env])
            keep = select_within_capacity(gs, gd, gw, gamma, cfg.adversary, adv_rng)
            drops += int(gw[~keep].sum())
            delivered_global = [e for e, k in zip(global_env, keep) if k]
            if keep.any():
                max_in = int(np.bincount(gd[keep], weights=gw[keep]).max())
                max_out = int(np.bincount(gs[keep], weights=gw[keep]).max())
        new_inbox = [[] for _ in range(n)]
        for e in sorted(local_env + delivered_global, key=lambda e: (e.sender, e.seq)):
            new_inbox[e.receiver].append(e)
        if transcript is not None:
            for e in local_env + global_env:
                transcript.append(f"{rnd} {e.sender} {e.receiver} {e.channel} {e.words}")
        ledger.record(
            phase,
            1,
            local_msgs=sum(e.words for e in local_env),
            global_msgs=sum(e.words for e in delivered_global),
            drops=drops,
            max_in=max_in,
            max_out=max_out,
        )
        inbox = new_inbox
        rnd += 1
    for v, p in enumerate(programs):
        p.finish(inbox[v])
    return programs, ledger


# ---------------------------------------------------------------------------
# neighborhood learning


class _Flood(NodeProgram):
    """Floods (node, annotation, incident edges) records for a fixed number of rounds."""

    def __init__(self, node, record, rounds):
        super().__init__(node)
        self.rounds = rounds
        self.known = {node: (0, record)}
        self.fresh = [node]

    def _absorb(self, rnd, delivered):
        self.fresh = []
        for e in delivered:
            who, rec = e.payload[0], e.payload[1:]
            if who not in self.known:
                self.known[who] = (rnd, rec)
                self.fresh.append(who)

    def step(self, rnd, delivered):
        if rnd > 0:
            self._absorb(rnd, delivered)
        sends = []
        for who in self.fresh:
            rec = self.known[who][1]
            for nb, _ in self.neighbors:
                sends.append(self.local(nb, who, *rec))
        return sends, rnd + 1 >= self.rounds

    def finish(self, delivered):
        self._absorb(self.rounds, delivered)


@dataclass
class NeighborhoodKnowledge:
    node: int
    radius: int
    nodes: dict  # node -> (hop distance, annotation)
    edges: set  # (a, b, w) with a < b
    ledger: RoundLedger


def broadcast_local_neighborhood(g: WeightedGraph, v: int, h: int, annotations=None, cfg=None):
    """Learn the h-hop neighborhood of v by h rounds of local flooding.

    v ends up knowing every node within h hops (with its annotation) and every
    edge that lies on a walk of at most h hops starting at v, i.e. edges with an
    endpoint at hop distance <= h-1.
    """
    if h < 1:
        raise ValueError("radius must be >= 1")
    cfg = cfg or HybridConfig()
    ann = annotations if annotations is not None else [None] * g.n
    progs = []
    for u in range(g.n):
        inc = tuple(sorted((min(u, x), max(u, x), w) for x, w in g.adjacency[u]))
        p = _Flood(u, (ann[u], inc), h)
        p.neighbors = g.adjacency[u]
        progs.append(p)
    _, ledger = run_hybrid(g, progs, cfg, max_rounds=h, phase="local-learn")
    known = progs[v].known
    nodes = {u: (hop, rec[0]) for u, (hop, rec) in known.items()}
    edges = set()
    for u, (hop, rec) in known.items():
        if hop <= h - 1:
            edges.update(rec[1])
    return NeighborhoodKnowledge(v, h, nodes, edges, ledger)


# ---------------------------------------------------------------------------
# bulk session


class Network:
    """Bulk-mode hybrid network used by the algorithm layer.

    Local-channel work (h rounds of flooding) is computed centrally and charged
    by round count. Every global round goes through `global_round`, which
    applies the capacity rule and records the outcome in the ledger.
    """

    def __init__(self, g: WeightedGraph, cfg: Optional[HybridConfig] = None, transcript=None, audit=False):
        self.g = g
        self.n = g.n
        self.cfg = cfg or HybridConfig()
        self.gamma = self.cfg.gamma(self.n)
        self.ledger = RoundLedger()
        self.transcript = transcript
        self.audit = audit
        self._adv = tag_rng(self.cfg.seed, "adversary")

    def rng(self, *tags) -> np.random.Generator:
        return tag_rng(self.cfg.seed, *tags)

    def local(self, phase: str, rounds: int, msgs: int = 0) -> None:
        if rounds > 0:
            self.ledger.record(phase, rounds, local_msgs=msgs)

    def global_round(self, phase, src, dst, words=None, local_msgs=0) -> np.ndarray:
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        wd = np.ones(len(src), dtype=np.int64) if words is None else np.asarray(words, dtype=np.int64)
        order = np.lexsort((np.arange(len(src)), src))
        keep_sorted = select_within_capacity(src[order], dst[order], wd[order], self.gamma, self.cfg.adversary, self._adv)
        keep = np.empty(len(src), dtype=bool)
        keep[order] = keep_sorted
        max_in = max_out = 0
        if keep.any():
            max_in = int(np.bincount(dst[keep], weights=wd[keep]).max())
            max_out = int(np.bincount(src[keep], weights=wd[keep]).max())
        if self.transcript is not None:
            rnd = self.ledger.round
            for a, b, w in zip(src[order].tolist(), dst[order].tolist(), wd[order].tolist()):
                self.transcript.append(f"{rnd} {a} {b} {GLOBAL} {w}")
        self.ledger.record(
            phase,
            1,
            local_msgs=local_msgs,
            global_msgs=int(wd[keep].sum()),
            drops=int(wd[~keep].sum()),
            max_in=max_in,
            max_out=max_out,
        )
        return keep

    def charge(self, phase, rounds, global_msgs=0, local_msgs=0, max_in=0, max_out=0) -> None:
        """Charge rounds whose schedule was already checked against the capacity rule."""
        if rounds > 0:
            self.ledger.record(phase, rounds, local_msgs, global_msgs, 0, max_in, max_out)
