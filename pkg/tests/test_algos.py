import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import oracle_rows, path_graph
from hybridsim import algos
from hybridsim.graph import INF, WeightedGraph, brute_eccentricities, gen_random_graph
from hybridsim.oracles import AbstractTransport
from hybridsim.sim import HybridConfig, Network
from hybridsim.skeleton import build_skeleton, sample_marks
from test_graph import small_graphs


def test_oracle_sssp_path():
    t = AbstractTransport(path_graph(4).degree)
    assert algos.oracle_sssp(path_graph(4), 0, t).tolist() == [0, 1, 2, 3]
    assert t.oracle_rounds == 2


def test_oracle_sssp_random_and_disconnected():
    g = gen_random_graph(300, "erdos-renyi", (1, 30), seed=13, p=0.05)
    assert np.array_equal(algos.oracle_sssp(g, 0), oracle_rows(g, [0])[:, 0])
    h = WeightedGraph.from_edges(5, [(0, 1, 3), (3, 4, 1)])
    assert algos.oracle_sssp(h, 0).tolist() == [0, 3, INF, INF, INF]


@settings(max_examples=50, deadline=None)
@given(small_graphs(max_n=14))
def test_tiered_apsp_exact_and_round_budget(g):
    t = AbstractTransport(g.degree)
    got = algos.tiered_apsp(g, t)
    if g.is_connected():
        assert np.array_equal(got, oracle_rows(g, range(g.n)))
    if g.n > 1:
        assert t.tiered_rounds == 1
        assert t.cc_rounds == math.ceil(math.log2(g.n)) <= 2 * math.ceil(math.log2(g.n))


def test_tiered_apsp_triangle():
    g = WeightedGraph.from_edges(3, [(0, 1, 1), (1, 2, 1), (0, 2, 5)])
    assert algos.tiered_apsp(g)[0, 2] == 2


def test_tiered_apsp_star_top_tier_first():
    g = WeightedGraph.from_edges(9, [(0, i, i) for i in range(1, 9)])
    seen = []

    def hook(i, table, tiers):
        seen.append(i)
        if i == tiers[0]:
            assert np.all(np.isfinite(table[0]))

    algos.tiered_apsp(g, instrument=hook)
    assert seen == [3, 2, 1, 0]


def test_tiered_apsp_induction_invariant():
    g = gen_random_graph(150, "random-geometric", (1, 50), seed=4)
    truth = oracle_rows(g, range(g.n))

    def hook(i, table, tiers):
        upper = tiers >= i
        assert np.array_equal(table[:, upper], truth[:, upper])

    algos.tiered_apsp(g, instrument=hook)


def test_tiered_apsp_single_node():
    assert algos.tiered_apsp(WeightedGraph.from_edges(1, [])).tolist() == [[0]]


def test_hybrid_exact_sssp():
    g = gen_random_graph(512, "erdos-renyi", (1, 50), seed=21, p=0.05)
    out = algos.hybrid_exact_sssp(g, 0, seed=21)
    assert np.array_equal(out.value, oracle_rows(g, [0])[:, 0])
    assert out.net.ledger.drops == 0
    assert set(out.net.ledger.phases) >= {"skeleton", "oracle-sim", "extend"}


def test_hybrid_exact_sssp_single_node():
    out = algos.hybrid_exact_sssp(WeightedGraph.from_edges(1, []), 0)
    assert out.value.tolist() == [0] and out.rounds == 0


def test_retry_on_disconnected_skeleton():
    # tiny h on a long path: the first skeletons are disconnected, retries are charged
    g = path_graph(200)
    with pytest.raises(algos.RetriesExhausted):
        algos.hybrid_exact_sssp(g, 0, seed=1, h_const=0.05, max_retries=2)
    calls = []

    def body(ctx):
        calls.append(ctx.attempt)
        ctx.net.local("x", 1)
        if ctx.attempt < 2:
            raise algos.TieredFailure("again")
        return 1, None, {}

    res = algos.run_with_retries(g, body, seed=0)
    assert res.retries == 2 and calls == [0, 1, 2] and res.rounds == 3


def test_skeleton_apsp_matches_dijkstra():
    g = gen_random_graph(729, "erdos-renyi", (1, 20), seed=3, p=0.04)

    def body(ctx):
        sk = build_skeleton(g, sample_marks(729, 2 / 3, ctx.rng("m")), 2 / 3, net=ctx.net)
        return algos.skeleton_apsp(ctx, sk), sk.marks, {}

    out = algos.run_with_retries(g, body, seed=3)
    marks = out.sources
    assert np.array_equal(out.value, oracle_rows(g, marks)[marks])


def test_skeleton_apsp_single_mark():
    g = path_graph(5)
    sk = build_skeleton(g, [2], 2 / 3, h=2)
    ctx = algos.Context(Network(g))
    assert algos.skeleton_apsp(ctx, sk).shape == (1, 1)


@pytest.mark.parametrize("x", [1 / 3, 1 / 2, 2 / 3, 0.8])
def test_rssp_exact(x):
    g = gen_random_graph(512, "random-geometric", (1, 20), seed=5)
    out = algos.rssp(g, x, seed=5)
    assert np.array_equal(out.value, oracle_rows(g, out.sources))
    assert np.all(out.value[out.sources, np.arange(len(out.sources))] == 0)


def test_densify_probability():
    n, x = 1000, 1 / 3
    q = algos.densify_probability(n, x)
    p = n ** (x - 1)
    assert p + (1 - p) * q == pytest.approx(n ** (-1 / 3))
    assert algos.densify_probability(n, 0.9) == 0.0


def test_rssp_rejects_bad_x():
    with pytest.raises(ValueError):
        algos.rssp(path_graph(3), 1.0)


def test_reassign_single_member_and_outsiders():
    g = gen_random_graph(1000, "erdos-renyi", seed=1)
    sk = build_skeleton(g, sample_marks(1000, 2 / 3, np.random.default_rng(1)), 2 / 3)
    members = np.zeros(1000, dtype=bool)
    members[5] = True
    ctx = algos.Context(Network(g, HybridConfig(seed=1)))
    got = algos.reassign_skeletons(ctx, sk, members)
    assert list(got) == [5] and len(got[5]) == sk.m  # probability 1/|A| = 1
    assert max(algos.helper_loads(got).values()) == 1


def test_reassign_deficit_raises():
    g = path_graph(30)
    sk = build_skeleton(g, [0], 0.5, h=2)
    members = np.zeros(30, dtype=bool)
    members[29] = True
    with pytest.raises(algos.AssignmentDeficit):
        algos.reassign_skeletons(algos.Context(Network(g)), sk, members)


def test_exact_n13_single_source_and_mixed():
    g = gen_random_graph(512, "lollipop", (1, 10), seed=2, tail=112, p=0.1)
    one = algos.exact_n13_ssp(g, [7], seed=1)
    assert np.array_equal(one.value, oracle_rows(g, [7]))
    U = [511, 0, 1, 2, 3, 4, 5, 6]
    out = algos.exact_n13_ssp(g, U, seed=1)
    assert np.array_equal(out.value, oracle_rows(g, U))
    assert out.info["sparse"] >= 1 and out.info["dense"] >= 1


def test_approx_weighted_and_unweighted_envelopes():
    g = gen_random_graph(500, "path", (1, 30), seed=1)
    U = np.arange(0, 500, 50)
    d = oracle_rows(g, U)
    out = algos.approx_mssp(g, U, seed=2)
    assert np.all(out.value >= d) and np.all(out.value <= 3 * d)
    gu = gen_random_graph(500, "path", seed=1)
    du = oracle_rows(gu, U)
    for eps in (0.25, 0.5):
        o = algos.approx_mssp(gu, U, eps, seed=2)
        assert np.all(o.value >= du) and np.all(o.value <= (1 + eps) * du)


def test_approx_representative_of_mark_is_itself():
    g = gen_random_graph(300, "grid", seed=3)
    marks = sample_marks(300, 2 / 3, Network(g, HybridConfig(seed=4)).rng("marks", "attempt", 0))
    s = int(marks[0])
    out = algos.approx_mssp(g, [s], seed=4)
    assert out.info["representatives"].tolist() == [s]


def test_ecc_unweighted_path_exact():
    g = path_graph(9)
    out = algos.ecc_unweighted(g, 0.5, seed=1)
    assert out.value.tolist() == brute_eccentricities(g).tolist()
    assert algos.diameter_unweighted(g, 0.5, seed=1).value == 8


def test_ecc_weighted_envelope():
    for seed in range(3):
        g = gen_random_graph(300, "random-geometric", (1, 40), seed=seed)
        ecc = brute_eccentricities(g)
        v = algos.ecc_weighted(g, seed=seed).value
        assert np.all(v <= ecc + 1e-9) and np.all(v >= ecc / 3 - 1e-9)


def test_single_node_ecc():
    g = WeightedGraph.from_edges(1, [])
    assert algos.ecc_weighted(g).value.tolist() == [0]
    assert algos.ecc_unweighted(g).value.tolist() == [0]


def test_diameter_weighted_star():
    g = WeightedGraph.from_edges(3, [(0, 1, 1), (0, 2, 5)])
    out = algos.diameter_weighted(g, seed=1)
    assert out.value == 5


def test_diameter_complete_graph():
    g = WeightedGraph.from_edges(6, [(i, j, 1) for i in range(6) for j in range(i + 1, 6)])
    assert algos.diameter_unweighted(g, 0.5).value == 1


def test_no_drops_anywhere():
    g = gen_random_graph(400, "random-geometric", (1, 9), seed=7)
    for out in (
        algos.hybrid_exact_sssp(g, 3, seed=1),
        algos.rssp(g, 0.5, seed=1),
        algos.exact_n13_ssp(g, [0, 1, 2], seed=1),
        algos.ecc_weighted(g, seed=1),
    ):
        assert out.net.ledger.drops == 0
