import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import path_graph
from hybridsim.graph import INF, WeightedGraph, bellman_ford, gen_random_graph, hop_distances
from hybridsim.hopcalc import OffsetSolver, exact_rows, hop_counts, hop_rows
from test_graph import small_graphs


@settings(max_examples=60, deadline=None)
@given(small_graphs(), st.integers(1, 6))
def test_hop_rows_match_limited_bellman_ford(g, h):
    rows, cert = hop_rows(g, np.arange(g.n), h)
    for s in range(g.n):
        assert np.array_equal(rows[s], bellman_ford(g, s, rounds=h).dist)
        full = bellman_ford(g, s).dist
        # certified entries are exact
        assert np.array_equal(rows[s][cert[s]], full[cert[s]])


def test_hop_rows_on_long_path_uncertified():
    g = path_graph(10)
    rows, cert = hop_rows(g, [0], 3)
    assert rows[0].tolist()[:4] == [0, 1, 2, 3]
    assert np.all(rows[0][4:] == INF)
    assert not cert[0][4:].any() and cert[0][:4].all()


def test_exact_rows():
    g = gen_random_graph(80, "random-geometric", (1, 9), seed=2)
    assert np.array_equal(exact_rows(g, [5])[0], bellman_ford(g, 5).dist)


@settings(max_examples=40, deadline=None)
@given(small_graphs(), st.integers(1, 5), st.data())
def test_offset_solver_matches_formula(g, h, data):
    init = np.array(data.draw(st.lists(st.one_of(st.just(INF), st.integers(0, 30).map(float)), min_size=g.n, max_size=g.n)))
    got = OffsetSolver(g, h).solve(init)
    limited = np.array([bellman_ford(g, v, rounds=h).dist for v in range(g.n)])
    want = (init[:, None] + limited).min(axis=0)
    assert np.array_equal(got, want)


def test_offset_solver_falls_back_on_many_hops():
    # cheap long route vs direct heavy edge: d^2(0, 4) uses the heavy edge
    g = WeightedGraph.from_edges(5, [(0, 1, 1), (1, 2, 1), (2, 3, 1), (3, 4, 1), (0, 4, 100)])
    init = np.full(5, INF)
    init[0] = 0
    solver = OffsetSolver(g, 2)
    out = solver.solve(init)
    assert out[4] == 100 and out[2] == 2
    assert solver.bf_columns == 1


@settings(max_examples=40, deadline=None)
@given(small_graphs(), st.integers(0, 5))
def test_hop_counts_match_bfs(g, limit):
    got = hop_counts(g, np.arange(g.n), limit)
    for s in range(g.n):
        bfs = hop_distances(g, s)
        want = np.where(bfs <= limit, bfs, -1)
        assert np.array_equal(got[s], want)


def test_hop_counts_many_sources():
    g = gen_random_graph(300, "erdos-renyi", seed=1)
    srcs = np.arange(0, 300, 3)
    got = hop_counts(g, srcs, 300)
    for i in (0, 17, 99):
        assert np.array_equal(got[i], hop_distances(g, srcs[i]))
