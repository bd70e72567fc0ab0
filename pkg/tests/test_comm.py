import math

import numpy as np
import pytest

from conftest import path_graph
from hybridsim.comm import (
    PayloadTooLarge,
    _popcount,
    aggregate_and_broadcast,
    cc_sim_round,
    cc_sim_rounds,
    local_sim_round,
    router_for,
    token_dissemination,
    tree_depth,
)
from hybridsim.graph import gen_random_graph
from hybridsim.sim import HybridConfig, Network
from hybridsim.skeleton import build_skeleton, sample_marks


@pytest.mark.parametrize("n", [1, 2, 7, 64, 100])
def test_aggregate_sum_max_min(n):
    g = path_graph(n)
    net = Network(g)
    vals = np.arange(n) * 3 + 1
    assert np.all(aggregate_and_broadcast(net, vals, np.add) == vals.sum())
    assert np.all(aggregate_and_broadcast(net, vals, np.maximum) == vals.max())
    two = aggregate_and_broadcast(net, np.stack([vals, vals], 1), (np.minimum, np.add))
    assert np.all(two[:, 0] == vals.min()) and np.all(two[:, 1] == vals.sum())
    assert net.ledger.total_rounds == 3 * 2 * tree_depth(n)
    assert net.ledger.drops == 0


@pytest.mark.parametrize("k", [0, 1, 40, 300])
def test_token_dissemination_complete(k):
    g = gen_random_graph(256, "erdos-renyi", seed=2)
    net = Network(g, HybridConfig(seed=5))
    owners = np.random.default_rng(1).integers(0, 256, size=k)
    res = token_dissemination(net, owners, keep_knowledge=True)
    assert res.k == k
    if k:
        assert np.all(_popcount(res.knowledge) == k)
    assert net.ledger.drops == 0
    assert net.ledger.max_global_in <= net.gamma and net.ledger.max_global_out <= net.gamma


def test_token_dissemination_fast_equals_audit():
    g = gen_random_graph(128, "random-geometric", seed=3)
    owners = np.random.default_rng(2).integers(0, 128, size=90)
    fast = Network(g, HybridConfig(seed=1))
    audit = Network(g, HybridConfig(seed=1), audit=True)
    token_dissemination(fast, owners)
    token_dissemination(audit, owners)
    assert fast.ledger.to_csv() == audit.ledger.to_csv()


def test_token_dissemination_rounds_grow_like_sqrt_k():
    g = gen_random_graph(1024, "erdos-renyi", seed=1)
    rounds = []
    for k in (64, 1024):
        net = Network(g, HybridConfig(seed=1))
        token_dissemination(net, np.random.default_rng(0).integers(0, 1024, size=k))
        rounds.append(net.ledger.rounds_of("td"))
    slope = math.log(rounds[1] / rounds[0]) / math.log(16)
    assert 0.2 < slope < 0.7


def _skeleton(n=300, model="random-geometric", seed=1, h_const=2.0):
    g = gen_random_graph(n, model, (1, 9), seed=seed)
    marks = sample_marks(n, 2 / 3, np.random.default_rng(seed))
    return g, build_skeleton(g, marks, 2 / 3, h_const)


def test_local_sim_round_delivers_to_skeleton_neighbors():
    g, sk = _skeleton()
    net = Network(g)
    got = local_sim_round(net, sk, {i: f"p{i}" for i in range(sk.m)})
    assert net.ledger.total_rounds == sk.h
    for i, lst in got.items():
        assert sorted(j for j, _ in lst) == sk.neighbors[i].tolist()
        assert all(p == f"p{j}" for j, p in lst)


def test_cc_round_fast_matches_audit():
    g, sk = _skeleton(400, "path", 2)
    rng = np.random.default_rng(0)
    src = rng.integers(0, sk.m, 200)
    dst = rng.integers(0, sk.m, 200)
    pairs = np.unique(src * sk.m + dst)
    src, dst = pairs // sk.m, pairs % sk.m
    ledgers = []
    for audit in (False, True):
        g2, sk2 = _skeleton(400, "path", 2)
        net = Network(g2, audit=audit)
        cc_sim_round(net, sk2, src, dst)
        cc_sim_rounds(net, sk2, np.r_[src, src], np.r_[dst, dst])
        ledgers.append(net.ledger.to_csv())
        assert net.ledger.drops == 0
        assert net.ledger.max_global_in <= net.gamma
    assert ledgers[0] == ledgers[1]


def test_cc_round_rejects_two_words_per_pair():
    g, sk = _skeleton()
    net = Network(g)
    with pytest.raises(PayloadTooLarge):
        cc_sim_round(net, sk, [0, 0], [1, 1])


def test_router_schedule_is_cached_and_bounded():
    g, sk = _skeleton()
    net = Network(g)
    r = router_for(net, sk)
    assert router_for(net, sk) is r
    assert r.max_in <= net.gamma and r.max_out <= net.gamma
    # every node helps exactly one mark
    assert r.counts.sum() == g.n
