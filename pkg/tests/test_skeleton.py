import math

import numpy as np
import pytest

from conftest import oracle_rows, path_graph
from hybridsim.graph import INF, gen_random_graph
from hybridsim.sim import Network
from hybridsim.skeleton import (
    build_skeleton,
    extend_distances,
    h_for,
    mark_probability,
    sample_marks,
    size_bound,
    verify_properties,
)


def test_h_and_probability():
    assert h_for(1000, 2 / 3) == math.ceil(2 * 1000 ** (1 / 3) * math.log(1000))
    assert h_for(2, 0.99) >= 1
    assert mark_probability(1000, 2 / 3) == pytest.approx(0.1)


def test_sample_marks_force_and_domain():
    rng = np.random.default_rng(0)
    m = sample_marks(100, 0.1, rng, force=[7, 42])
    assert 7 in m and 42 in m and np.all(np.diff(m) > 0)
    with pytest.raises(ValueError):
        sample_marks(10, 0.0, rng)


def test_skeleton_edges_are_h_hop_distances():
    g = path_graph(10, w=2)
    sk = build_skeleton(g, [0, 3, 9], 0.5, h=4)
    assert sk.dist[0, 1] == 6
    assert sk.dist[1, 2] == INF  # 6 hops apart
    assert sk.degree.tolist() == [1, 1, 0]
    assert sk.edges == [(0, 1, 6)]


@pytest.mark.parametrize("model", ["erdos-renyi", "random-geometric", "path"])
def test_bulk_and_program_engines_agree(model):
    g = gen_random_graph(150, model, (1, 9), seed=3)
    marks = sample_marks(150, 2 / 3, np.random.default_rng(1))
    a = build_skeleton(g, marks, 2 / 3, h=6)
    b = build_skeleton(g, marks, 2 / 3, engine="programs", h=6, net=Network(g))
    assert np.array_equal(a.dist, b.dist)


def test_build_charges_h_rounds():
    g = gen_random_graph(200, "grid", seed=1)
    net = Network(g)
    sk = build_skeleton(g, sample_marks(200, 2 / 3, np.random.default_rng(0)), 2 / 3, net=net)
    assert net.ledger.rounds_of("skeleton") == sk.h


@pytest.mark.parametrize("seed", range(4))
def test_properties_hold_on_random_graphs(seed):
    g = gen_random_graph(400, "random-geometric", (1, 20), seed=seed)
    sk = build_skeleton(g, sample_marks(400, 2 / 3, np.random.default_rng(seed)), 2 / 3)
    rep = verify_properties(g, sk)
    assert rep.all_ok, rep.witnesses
    assert sk.m <= size_bound(400, 2 / 3)
    assert '"coverage": true' in rep.to_text()


def test_coverage_fails_for_sparse_marks():
    g = path_graph(40)
    sk = build_skeleton(g, [0, 39], 0.5, h=5)
    rep = verify_properties(g, sk)
    assert not rep.coverage and not rep.connected
    assert not rep.all_ok


def test_extend_with_exact_estimates_is_exact():
    g = gen_random_graph(300, "path", (1, 9), seed=2)
    marks = sample_marks(300, 2 / 3, np.random.default_rng(4), force=[10])
    sk = build_skeleton(g, marks, 2 / 3)
    assert sk.h < 299  # the certificate cannot cover the whole path
    truth = oracle_rows(g, [10])
    est = truth[sk.marks]
    for exact_formula in (False, True):
        out = extend_distances(g, sk, [10], est, exact_formula=exact_formula)
        assert np.array_equal(out, truth)


def test_extend_never_underestimates_with_overestimates():
    g = gen_random_graph(200, "random-geometric", (1, 9), seed=5)
    sk = build_skeleton(g, sample_marks(200, 2 / 3, np.random.default_rng(1)), 2 / 3, h=3)
    truth = oracle_rows(g, [0])
    est = truth[sk.marks] + 5
    out = extend_distances(g, sk, [0], est, exact_formula=True)
    assert np.all(out >= truth)
