import numpy as np
import pytest

from hybridsim.cli import main, parse_graph_spec
from hybridsim.graph import dijkstra, read_graph, read_roles
from hybridsim.harness import (
    ScenarioError,
    audit_transcript,
    fit_slope,
    parse_scenario,
    run_scenario,
    run_seed,
    scaling_sweep,
)

SMALL = """
# small exact run
algorithm = hybridExactSSSP
graph = random-geometric
n = 200
weights = 1..9
seeds = 1..3
distances = true
"""


def test_parse_scenario_fields():
    sc = parse_scenario(SMALL + "x = 1/2\neps = 0.25\n", "small")
    assert sc.name == "small" and sc.n == 200 and sc.weights == (1, 9)
    assert sc.seeds == [1, 2, 3] and sc.x == 0.5 and sc.eps == 0.25 and sc.distances


@pytest.mark.parametrize(
    "text,line",
    [
        ("algorithm = nope", 1),
        ("n = 10\nbogus = 3", 2),
        ("n = 10\n\nweights = 1..x", 3),
        ("# c\nx = two", 2),
        ("seeds", 1),
    ],
)
def test_parse_errors_name_the_line(text, line):
    with pytest.raises(ScenarioError, match=f"line {line}"):
        parse_scenario(text)


def test_run_writes_files_and_distances(tmp_path):
    sc = parse_scenario(SMALL, "small")
    res = run_scenario(sc, tmp_path)
    assert res.ok
    names = {p.name for p in tmp_path.iterdir()}
    assert names == {"results.csv", "ledger.csv", "summary.txt", "distances.csv"}
    header = (tmp_path / "results.csv").read_text().splitlines()[0]
    assert header == "scenario,algorithm,seed,n,m,rounds,retries,drops,max_error,violations,status"
    assert (tmp_path / "ledger.csv").read_text().startswith("seed,phase,rounds,localMsgs,globalMsgs,drops\n")
    rows = (tmp_path / "distances.csv").read_text().splitlines()
    assert len(rows) == 1 + 3 * 200
    assert (tmp_path / "summary.txt").read_text().endswith("verdict PASS\n")


def test_distances_match_oracle():
    sc = parse_scenario(SMALL, "small")
    res = run_seed(sc, 2)
    g = __import__("hybridsim.harness", fromlist=["make_graph"]).make_graph(sc, 2)[0]
    truth = dijkstra(g, 0).dist
    got = np.array([d for _, _, d in res.distances])
    assert np.array_equal(got, truth)


def test_rerun_is_byte_identical(tmp_path):
    sc = parse_scenario(SMALL.replace("distances = true", ""), "small")
    run_scenario(sc, tmp_path / "a")
    run_scenario(sc, tmp_path / "b", threads=3)
    for f in ("results.csv", "ledger.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_transcript_files_and_capacity(tmp_path):
    sc = parse_scenario("algorithm = tokenDissemination\nn = 128\nsource_count = 40\nseeds = 4", "td")
    res = run_scenario(sc, tmp_path, transcript=True)
    assert res.ok
    lines = (tmp_path / "transcript_seed4.txt").read_text().split("\n")[:-1]
    assert lines
    from hybridsim.sim import HybridConfig

    gamma = HybridConfig(gamma_const=sc.gamma_const).gamma(128)
    assert audit_transcript(lines, gamma) == 0


def test_audit_transcript_counts_overloads():
    lines = ["0 1 2 global 3", "0 1 3 global 2", "0 4 2 global 1", "0 5 6 local 99"]
    # node 1 sends 5 > 4; node 2 receives 4
    assert audit_transcript(lines, 4) == 1
    assert audit_transcript(lines, 3) == 2


def test_fit_slope():
    sizes = [512, 4096, 32768]
    assert fit_slope(sizes, [s**0.5 for s in sizes])[0] == pytest.approx(0.5)
    four = [2**8, 2**10, 2**12, 2**14]
    slope, ll = fit_slope(four, [s ** (1 / 3) * np.log(s) ** 2 for s in four])
    assert slope == pytest.approx(1 / 3) and ll == pytest.approx(2)


def test_sweep_needs_three_sizes():
    sc = parse_scenario("sizes = 64,128\nseeds = 1..3")
    with pytest.raises(ScenarioError):
        scaling_sweep(sc)


def test_small_sweep_is_increasing():
    sc = parse_scenario("algorithm = tokenDissemination\nn = 256\nsizes = 16,64,256\nseeds = 1..3\nverify = false")
    res = scaling_sweep(sc)
    assert res.medians == sorted(res.medians) and 0 < res.slope < 1


def test_lower_bound_scenario():
    sc = parse_scenario("algorithm = approxMSSP\ngraph = lower-bound\nn = 256\nsources = lower-bound\nseeds = 1")
    r = run_seed(sc, 1)
    assert r.status == "ok" and r.violations == 0


def test_failed_run_is_reported_not_raised():
    sc = parse_scenario("algorithm = hybridExactSSSP\ngraph = path\nn = 200\nh_const = 0.05\nmax_retries = 1\nseeds = 1")
    r = run_seed(sc, 1)
    assert r.status == "error:RetriesExhausted" and r.rounds > 0


def test_cli_run_and_verify(tmp_path, capsys):
    f = tmp_path / "s.txt"
    f.write_text(SMALL)
    assert main(["verify", str(f), "--out-dir", str(tmp_path / "o")]) == 0
    assert "verdict PASS" in capsys.readouterr().out
    assert main(["run", str(f), "--out-dir", str(tmp_path / "o2"), "--transcript"]) == 0
    assert (tmp_path / "o2" / "transcript_seed1.txt").exists()


def test_cli_parse_error_exit_code(tmp_path, capsys):
    f = tmp_path / "bad.txt"
    f.write_text("n = 10\nalgorithm = ???\n")
    assert main(["run", str(f)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_cli_gen_graph(tmp_path):
    out = tmp_path / "g.txt"
    assert main(["gen-graph", "erdos-renyi:n=50,p=0.2,weights=1..7,seed=3", str(out)]) == 0
    g = read_graph(out)
    assert g.n == 50 and 1 <= g.w.min() and g.w.max() <= 7
    lb = tmp_path / "lb.txt"
    assert main(["gen-graph", "lower-bound:n=128,p=0.5,seed=1", str(lb)]) == 0
    assert len(read_roles(str(lb) + ".roles")) == read_graph(lb).n
    assert parse_graph_spec("grid:n=9") == {"model": "grid", "n": "9"}
    assert main(["gen-graph", "grid:n=9,bogus=1", str(out)]) == 2


def test_file_graph_scenario(tmp_path):
    out = tmp_path / "g.txt"
    main(["gen-graph", "random-geometric:n=150,weights=1..5,seed=2", str(out)])
    sc = parse_scenario(f"algorithm = rssp\ngraph = file:{out}\nx = 1/2\nseeds = 1,2")
    assert run_scenario(sc).ok
