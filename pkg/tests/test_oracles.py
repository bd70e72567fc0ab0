import numpy as np
import pytest

from hybridsim.graph import gen_random_graph
from hybridsim.oracles import (
    FROM_ORACLE,
    TO_ORACLE,
    AbstractTransport,
    BudgetExceeded,
    HybridTransport,
    OracleRoundSpec,
    TieredRoundSpec,
    oracle_model_round,
    receivers_mask,
    replication,
    select_oracle,
    simulate_oracle_round_in_hybrid,
    simulate_tiered_round_in_hybrid,
    tier_of,
    tiered_model_round,
)
from hybridsim.sim import Network
from hybridsim.skeleton import build_skeleton, sample_marks


def test_select_oracle_ties_to_larger_id():
    assert select_oracle([1, 3, 3, 2]) == 2
    assert select_oracle([0]) == 0


def test_tiers():
    assert tier_of([0, 1, 2, 3, 4, 7, 8]).tolist() == [0, 0, 1, 1, 2, 2, 3]


def test_receivers_mask():
    r = receivers_mask([1, 2, 5])
    # node 2 (deg 5) is heard by nodes of degree >= 2.5 only
    assert r[2].tolist() == [False, False, True]
    assert r[0].all()


def test_oracle_budget():
    with pytest.raises(BudgetExceeded):
        oracle_model_round(OracleRoundSpec({0: [1, 2]}), [1, 1])
    with pytest.raises(ValueError):
        oracle_model_round(OracleRoundSpec({}, "sideways"), [1])


def test_tiered_budget():
    with pytest.raises(BudgetExceeded):
        tiered_model_round(TieredRoundSpec(np.array([2, 0])), [1, 1])


def test_replication_caps_at_m():
    assert replication(10, [1, 100]).tolist() == [10, 1]
    assert replication(1, [0]).tolist() == [0]


def _sparse_skeleton(seed, n=1000):
    g = gen_random_graph(n, "grid", (1, 10), seed=seed)
    marks = sample_marks(n, 2 / 3, np.random.default_rng(seed))
    return g, build_skeleton(g, marks, 2 / 3, h_const=0.5)


@pytest.mark.parametrize("direction", [TO_ORACLE, FROM_ORACLE])
def test_oracle_simulation_matches_abstract(direction):
    g, sk = _sparse_skeleton(1, 400)
    deg = sk.degree
    assert not sk.adjacency[~np.eye(sk.m, dtype=bool)].all()  # not a clique
    rng = np.random.default_rng(3)
    out = {v: rng.integers(0, 100, size=d).tolist() for v, d in enumerate(deg.tolist()) if d}
    spec = OracleRoundSpec(out, direction)
    net = Network(g)
    got = simulate_oracle_round_in_hybrid(net, sk, spec)
    want = oracle_model_round(spec, deg)
    assert got.oracle == want.oracle
    assert got.messages == want.messages
    assert net.ledger.drops == 0


def test_tiered_simulation_covers_intended_receivers():
    g, sk = _sparse_skeleton(2, 400)
    spec = TieredRoundSpec(sk.degree.astype(np.int64))
    net = Network(g)
    got = simulate_tiered_round_in_hybrid(net, sk, spec)
    want = tiered_model_round(spec, sk.degree)
    assert got.contract_ok
    assert np.all(got.covered[want.covered])
    assert net.ledger.drops == 0


def test_transports_count_rounds():
    g, sk = _sparse_skeleton(3, 300)
    abstract = AbstractTransport(sk.degree)
    abstract.oracle_round(OracleRoundSpec({}, TO_ORACLE))
    abstract.cc_round([0], [1])
    assert (abstract.oracle_rounds, abstract.cc_rounds) == (1, 1)
    hybrid = HybridTransport(Network(g), sk)
    hybrid.tiered_round(TieredRoundSpec(np.zeros(sk.m, dtype=np.int64)))
    assert hybrid.tiered_rounds == 1 and hybrid.tiered_attempts >= 1
