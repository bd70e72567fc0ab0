"""Communication primitives built on the bulk `Network` session.

aggregate_and_broadcast  global binary tree over ids, converge-cast then broadcast
token_dissemination      random global pushes plus one hop of local sharing per round
local_sim_round          one LOCAL round on the skeleton, h rounds of flooding in G
cc_sim_round             one Congested Clique round on the skeleton via a relay schedule
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sim import Network, select_within_capacity


class RoundBudgetExceeded(RuntimeError):
    pass


class PayloadTooLarge(ValueError):
    pass


# ---------------------------------------------------------------------------
# aggregate and broadcast


def tree_depth(n: int) -> int:
    return int(math.floor(math.log2(n))) if n > 1 else 0


def aggregate_and_broadcast(net: Network, values, combine=np.add, phase="agg"):
    """Fold per-node values with an associative, commutative `combine`; every node gets the result.

    `values` is an array of shape (n,) or (n, c). `combine` is a numpy ufunc or,
    for multi-column values, a sequence of ufuncs (one per column). Each column
    costs one word per message. Uses 2*floor(log2 n) global rounds.
    Returns an array with the result repeated for every node.
    """
    vals = np.array(values, copy=True)
    n = net.n
    if len(vals) != n:
        raise ValueError("one value per node required")
    squeeze = vals.ndim == 1
    if squeeze:
        vals = vals[:, None]
    ufuncs = list(combine) if isinstance(combine, (list, tuple)) else [combine] * vals.shape[1]
    words = vals.shape[1]
    depth = tree_depth(n)
    ids = np.arange(n)
    level = np.floor(np.log2(ids + 1)).astype(np.int64)
    for d in range(depth, 0, -1):
        kids = ids[level == d]
        parents = (kids - 1) // 2
        keep = net.global_round(phase, kids, parents, np.full(len(kids), words))
        assert keep.all(), "tree round exceeded capacity"
        for c, f in enumerate(ufuncs):
            f.at(vals[:, c], parents, vals[kids, c])
    result = vals[0].copy()
    for d in range(0, depth):
        kids = ids[level == d + 1]
        keep = net.global_round(phase, (kids - 1) // 2, kids, np.full(len(kids), words))
        assert keep.all(), "tree round exceeded capacity"
    out = np.broadcast_to(result, (n, words)).copy()
    return out[:, 0] if squeeze else out


# ---------------------------------------------------------------------------
# token dissemination


def _popcount(bits: np.ndarray) -> np.ndarray:
    return np.bitwise_count(bits).sum(axis=-1, dtype=np.int64)


def _pack(owner: np.ndarray, n: int, k: int) -> np.ndarray:
    words = max(1, (k + 63) // 64)
    known = np.zeros((n, words), dtype=np.uint64)
    t = np.arange(k)
    np.bitwise_or.at(known, (owner, t // 64), np.left_shift(np.uint64(1), (t % 64).astype(np.uint64)))
    return known


@dataclass
class TDResult:
    k: int
    max_per_node: int
    rounds: int
    attempts: int
    schedule: int
    knowledge: np.ndarray = None  # packed bitsets (n, words) of the successful attempt


def td_schedule(k: int, per_node: int, n: int, gamma: int) -> int:
    """Rounds of pushing in one attempt."""
    if k == 0:
        return 0
    spread = math.ceil(2 * math.sqrt(k * math.log(max(n, 2)) / gamma))
    seed_rounds = math.ceil(math.log2(max(n, 2)) / math.log2(max(gamma, 2)))
    return spread + math.ceil(per_node / gamma) + seed_rounds


def token_dissemination(net: Network, owners, phase="td", tag="td", max_attempts=6, keep_knowledge=False):
    """Make every token known to every node.

    `owners[t]` is the node that initially holds token t. Token contents are
    never inspected: on success every node knows every token, so callers read
    the contents centrally. One aggregate learns (k, max per node); each
    attempt runs a fixed schedule and ends with a completeness aggregate.
    A failed attempt is restarted with a doubled schedule and a fresh seed.
    """
    owners = np.asarray(owners, dtype=np.int64).reshape(-1)
    n, gamma = net.n, net.gamma
    counts = np.bincount(owners, minlength=n)
    agg = aggregate_and_broadcast(net, np.stack([counts, counts], axis=1), (np.add, np.maximum), phase="agg")
    k, ell = int(agg[0, 0]), int(agg[0, 1])
    if k == 0 or n == 1:
        know = _pack(owners, n, k) if keep_knowledge else None
        return TDResult(k, ell, 0, 1, 0, know)
    src, _, _, starts, heads = net.g.arcs()
    T = td_schedule(k, ell, n, gamma)
    rounds = 0
    for attempt in range(max_attempts):
        rng = net.rng(tag, "attempt", attempt)
        known = _pack(owners, n, k)
        full = False
        for _ in range(T):
            if full and not (net.audit or net.transcript is not None):
                # everyone already knows everything: each node pushes min(k, gamma)
                # words over per-slot permutations, nothing changes
                slots = min(gamma, k)
                net.charge(phase, 1, global_msgs=n * slots, max_in=slots, max_out=slots)
                rounds += 1
                continue
            snd, rcv, tok = _td_pushes(known, k, gamma, rng)
            if net.audit or net.transcript is not None:
                keep = net.global_round(phase, snd, rcv)
                assert keep.all()
            else:
                # per-slot permutations give every node at most gamma words each way
                mi = int(np.bincount(rcv, minlength=n).max()) if len(rcv) else 0
                mo = int(np.bincount(snd, minlength=n).max()) if len(snd) else 0
                assert mi <= gamma and mo <= gamma
                net.charge(phase, 1, global_msgs=len(snd), max_in=mi, max_out=mo)
            rounds += 1
            new = known.copy()
            if len(src):
                share = np.bitwise_or.reduceat(known[src], starts, axis=0)
                new[heads] |= share
            if len(tok):
                np.bitwise_or.at(new, (rcv, tok // 64), np.left_shift(np.uint64(1), (tok % 64).astype(np.uint64)))
            known = new
            full = bool((_popcount(known) == k).all())
        done = (_popcount(known) == k).astype(np.int64)
        ok = aggregate_and_broadcast(net, done, np.minimum, phase="agg")
        if ok[0] == 1:
            return TDResult(k, ell, rounds, attempt + 1, T, known if keep_knowledge else None)
        T *= 2
    raise RoundBudgetExceeded(f"token dissemination incomplete after {max_attempts} attempts")


def _select_table():
    # _SELECT[b, r] = position of the r-th set bit of byte b
    table = np.zeros((256, 8), dtype=np.int64)
    for b in range(256):
        pos = [i for i in range(8) if b >> i & 1]
        table[b, : len(pos)] = pos
    return table


_SELECT = _select_table()


def _nth_known(known, node, rank):
    """Token index of the rank-th known token (0-based, in index order) of each node."""
    n, W = known.shape
    stride = W * 64 + 1
    wcum = np.cumsum(np.bitwise_count(known), axis=1, dtype=np.int64)
    off = np.arange(n, dtype=np.int64)[:, None] * stride
    flat = (wcum + off).ravel()
    pos = np.searchsorted(flat, rank + node * stride, side="right")
    w = pos - node * W
    prev = np.where(w > 0, flat[np.maximum(pos - 1, 0)] - node * stride, 0)
    rank = rank - prev
    word = known.ravel()[pos]
    bytes_ = word.view(np.uint8).reshape(-1, 8)
    bcum = np.cumsum(np.bitwise_count(bytes_), axis=1, dtype=np.int64)
    b = (bcum <= rank[:, None]).sum(axis=1)
    rank = rank - np.where(b > 0, bcum[np.arange(len(b)), np.maximum(b - 1, 0)], 0)
    byte = bytes_[np.arange(len(b)), b]
    return w * 64 + b * 8 + _SELECT[byte, rank]


def _td_pushes(known, k, gamma, rng):
    """Each node pushes up to gamma known tokens, slot j going to perm_j[node].

    A node knowing at most gamma tokens pushes all of them; otherwise it
    pushes gamma tokens drawn uniformly (with replacement) from what it knows.
    """
    n = known.shape[0]
    cnt = np.bitwise_count(known).sum(axis=1, dtype=np.int64)
    slots = min(gamma, k)
    per = np.minimum(cnt, slots)
    snd = np.repeat(np.arange(n), per)
    if len(snd) == 0:
        e = np.zeros(0, dtype=np.int64)
        return e, e, e
    first = np.r_[0, np.cumsum(per)[:-1]]
    slot = np.arange(len(snd)) - np.repeat(first, per)
    big = cnt[snd] > slots
    rank = slot.copy()
    rank[big] = (rng.random(int(big.sum())) * cnt[snd[big]]).astype(np.int64)
    tok = _nth_known(known, snd, rank)
    perms = np.stack([rng.permutation(n) for _ in range(slots)])
    rcv = perms[slot, snd]
    return snd, rcv, tok


# ---------------------------------------------------------------------------
# skeleton simulations


def local_sim_round(net: Network, skel, payloads=None, phase="local-sim"):
    """One LOCAL round on the skeleton: every mark receives its skeleton neighbors' payloads.

    Realized by h rounds of flooding along the real paths backing the virtual
    edges; exactly skel.h rounds are charged. `payloads` maps mark index to a
    payload (or is a sequence indexed by mark index). Returns a dict from mark
    index to a list of (neighbor index, payload).
    """
    words = 0
    out = {}
    if payloads is not None:
        items = payloads.items() if isinstance(payloads, dict) else enumerate(payloads)
        pay = {i: p for i, p in items if p is not None}
        for i, nbrs in enumerate(skel.neighbors):
            got = [(j, pay[j]) for j in nbrs if j in pay]
            if got:
                out[i] = got
                words += len(got)
    net.local(phase, skel.h, msgs=words)
    return out


class CCRouter:
    """Deterministic relay schedule for all ordered mark pairs.

    Each real node helps its nearest mark (hop distance, ties to the smaller
    mark). The word from mark i to mark j goes
        i --local--> H(i)[j mod c_i] --global--> relay (i*m + j) mod n
          --global--> H(j)[i mod c_j] --local--> j
    Global slots are assigned greedily so that in every slot each node sends
    and receives at most gamma words. Setup disseminates the mark ids and has
    receiving helpers register at their relays.
    """

    def __init__(self, net: Network, skel, phase="cc-sim"):
        g = net.g
        self.n, self.m, self.gamma = g.n, len(skel.marks), net.gamma
        m, n = self.m, self.n
        self.phase = phase
        marks = np.asarray(skel.marks, dtype=np.int64)
        owner, hop = _nearest_mark(g, marks)
        self.depth = int(hop.max()) if m else 0
        # helper lists ordered by node id
        order = np.lexsort((np.arange(n), owner))
        self.helper_flat = order
        self.counts = np.bincount(owner, minlength=m).astype(np.int64) if m else np.zeros(0, np.int64)
        self.helper_start = np.r_[0, np.cumsum(self.counts)[:-1]].astype(np.int64) if m else self.counts
        if m:
            token_dissemination(net, marks, phase=phase, tag=("cc-ids", m))
        net.local(phase, 2 * self.depth)
        self.slot1 = np.full((m, m), -1, dtype=np.int32)
        self.slot2 = np.full((m, m), -1, dtype=np.int32)
        self.r1 = self.r2 = 0
        if m < 2:
            return
        ii, jj = np.nonzero(~np.eye(m, dtype=bool))
        a = self._send_helper(ii, jj)
        r = (ii * m + jj) % n
        b = self._recv_helper(ii, jj)
        s1 = _greedy_slots(a, r, self.gamma)
        s2 = _greedy_slots(r, b, self.gamma)
        self.slot1[ii, jj] = s1
        self.slot2[ii, jj] = s2
        self.r1 = int(s1.max()) + 1
        self.r2 = int(s2.max()) + 1
        self.max_in, self.max_out = _slot_loads(a, r, s1, b, s2, n)
        if max(self.max_in, self.max_out) > self.gamma:
            raise RuntimeError("relay schedule violated the capacity rule")
        # registration: receiving helpers tell their relays who they are (stage 2 reversed)
        self._run_stage(net, b, r, s2, self.r2, phase)

    def helpers(self, i):
        return self.helper_flat[self.helper_start[i] : self.helper_start[i] + self.counts[i]]

    def _send_helper(self, i, j):
        return self.helper_flat[self.helper_start[i] + j % self.counts[i]]

    def _recv_helper(self, i, j):
        return self._send_helper(j, i)

    @property
    def length(self) -> int:
        return 2 * self.depth + self.r1 + self.r2

    def _run_stage(self, net, snd, rcv, slots, nslots, phase):
        if net.audit or net.transcript is not None:
            for t in range(nslots):
                sel = slots == t
                keep = net.global_round(phase, snd[sel], rcv[sel])
                if not keep.all():
                    raise RuntimeError("relay schedule violated the capacity rule")
            return
        if len(snd) == 0:
            net.charge(phase, nslots)
            return
        key_s = slots.astype(np.int64) * self.n + snd
        key_r = slots.astype(np.int64) * self.n + rcv
        mo = int(np.unique(key_s, return_counts=True)[1].max())
        mi = int(np.unique(key_r, return_counts=True)[1].max())
        if mo > self.gamma or mi > self.gamma:
            raise RuntimeError("relay schedule violated the capacity rule")
        net.charge(phase, nslots, global_msgs=len(snd), max_in=mi, max_out=mo)

    def route(self, net: Network, src, dst, phase=None):
        """Deliver one word for each (src[k], dst[k]) mark-index pair."""
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        other = src != dst
        s, d = src[other], dst[other]
        if len(s):
            key = s * self.m + d
            if len(np.unique(key)) != len(key):
                raise PayloadTooLarge("more than one word for an ordered mark pair")
        self._deliver(net, s, d, phase or self.phase)
        return src, dst

    def _deliver(self, net, s, d, phase):
        k = len(s)
        if not (net.audit or net.transcript is not None):
            # any subset of the verified all-pairs schedule keeps its slots, so
            # the per-slot loads can only shrink
            net.charge(phase, self.length, global_msgs=2 * k, local_msgs=2 * k, max_in=self.max_in, max_out=self.max_out)
            return
        net.local(phase, self.depth, msgs=k)
        a = self._send_helper(s, d) if k else s
        r = (s * self.m + d) % self.n
        b = self._recv_helper(s, d) if k else s
        self._run_stage(net, a, r, self.slot1[s, d] if k else s, self.r1, phase)
        self._run_stage(net, r, b, self.slot2[s, d] if k else s, self.r2, phase)
        net.local(phase, self.depth, msgs=k)

    def route_counts(self, net: Network, counts, phase=None):
        """Deliver counts[i, j] words from mark i to mark j; layer t carries the t-th word of every pair.

        Returns the number of layers (Congested Clique rounds) used.
        """
        counts = np.array(counts, dtype=np.int64, copy=True)
        np.fill_diagonal(counts, 0)
        layers = int(counts.max()) if counts.size else 0
        phase = phase or self.phase
        if not (net.audit or net.transcript is not None):
            if layers:
                total = int(counts.sum())
                net.charge(
                    phase,
                    self.length * layers,
                    global_msgs=2 * total,
                    local_msgs=2 * total,
                    max_in=self.max_in,
                    max_out=self.max_out,
                )
            return layers
        for t in range(layers):
            s, d = np.nonzero(counts > t)
            self._deliver(net, s, d, phase)
        return layers


def _slot_loads(a, r, s1, b, s2, n):
    """Largest per-slot global words sent / received by one node over both stages."""
    mi = mo = 0
    for snd, rcv, slot in ((a, r, s1), (r, b, s2)):
        mo = max(mo, int(np.unique(slot.astype(np.int64) * n + snd, return_counts=True)[1].max()))
        mi = max(mi, int(np.unique(slot.astype(np.int64) * n + rcv, return_counts=True)[1].max()))
    return mi, mo


def _nearest_mark(g, marks):
    """Per node: index of the nearest mark by hops (ties to smaller index) and the hop count."""
    n = g.n
    owner = np.full(n, -1, dtype=np.int64)
    hop = np.zeros(n, dtype=np.int64)
    if len(marks) == 0:
        return owner, hop
    owner[marks] = np.arange(len(marks))
    src, dst, _, _, _ = g.arcs()
    level = 0
    frontier = np.zeros(n, dtype=bool)
    frontier[marks] = True
    while True:
        level += 1
        sel = frontier[src] & (owner[dst] < 0)
        if not sel.any():
            break
        cand = np.full(n, np.iinfo(np.int64).max)
        np.minimum.at(cand, dst[sel], owner[src[sel]])
        new = cand < np.iinfo(np.int64).max
        owner[new] = cand[new]
        hop[new] = level
        frontier = new
    return owner, hop


def _greedy_slots(snd, rcv, gamma):
    """Assign each message a slot so that per slot each node sends and receives <= gamma."""
    k = len(snd)
    slot = np.full(k, -1, dtype=np.int32)
    left = np.arange(k)
    t = 0
    while len(left):
        keep = select_within_capacity(snd[left], rcv[left], None, gamma)
        slot[left[keep]] = t
        left = left[~keep]
        t += 1
    return slot


def router_for(net: Network, skel) -> CCRouter:
    """The skeleton's relay schedule, built (and charged) on first use."""
    if getattr(skel, "router", None) is None:
        skel.router = CCRouter(net, skel)
    return skel.router


def cc_sim_round(net: Network, skel, src, dst, phase="cc-sim"):
    """One Congested Clique round among marks: at most one word per ordered pair."""
    return router_for(net, skel).route(net, src, dst, phase)


def cc_sim_rounds(net: Network, skel, src, dst, phase="cc-sim"):
    """Several words per pair: layer t carries the t-th word of every pair. Returns the layer count."""
    m = skel.m
    counts = np.zeros((m, m), dtype=np.int64)
    np.add.at(counts, (np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)), 1)
    return router_for(net, skel).route_counts(net, counts, phase)
