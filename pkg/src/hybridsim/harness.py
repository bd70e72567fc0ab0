"""Scenario files, batch runs, verification against centralized oracles, scaling sweeps."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import algos
from .comm import aggregate_and_broadcast, token_dissemination
from .graph import (
    WeightedGraph,
    brute_eccentricities,
    dijkstra,
    gen_lower_bound_graph,
    gen_random_graph,
    hop_distances,
    read_graph,
)
from .oracles import (
    FROM_ORACLE,
    TO_ORACLE,
    AbstractTransport,
    OracleRoundSpec,
    TieredRoundSpec,
    oracle_model_round,
    simulate_oracle_round_in_hybrid,
    simulate_tiered_round_in_hybrid,
    tiered_model_round,
)
from .sim import HybridConfig, Network
from .skeleton import build_skeleton, sample_marks, verify_properties

EXACT = {"oracleSSSP", "hybridExactSSSP", "tieredAPSP", "skeletonAPSP", "rssp", "exactN13SSP"}
ALGORITHMS = sorted(
    EXACT
    | {
        "reassignSkeletons",
        "approxMSSP",
        "eccUnweighted",
        "eccWeighted",
        "diameterUnweighted",
        "diameterWeighted",
        "tokenDissemination",
        "aggregateAndBroadcast",
        "skeletonProperties",
        "oracleSimulation",
        "tieredSimulation",
    }
)


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    name: str = "scenario"
    algorithm: str = "hybridExactSSSP"
    graph: str = "erdos-renyi"  # generator name, "lower-bound" or "file:<path>"
    n: int = 512
    weights: tuple = (1, 1)
    p: Optional[float] = None
    r: Optional[float] = None
    tail: Optional[int] = None
    lb_p: float = 0.5
    x: float = 2 / 3
    y: float = 1 / 3
    eps: float = 0.5
    sources: str = "auto"  # auto | lower-bound | comma list of ids
    source_count: Optional[int] = None
    h_const: float = 2.0
    gamma_const: float = 4.0
    sampler_const: float = 2.0
    theta: float = 1.0
    seeds: list = field(default_factory=lambda: [0])
    verify: bool = True
    sizes: list = field(default_factory=list)  # sweep over n (or k for tokenDissemination)
    distances: bool = False
    max_retries: int = 5


def _num_list(text, cast):
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(cast(lo), cast(hi) + 1))
        else:
            out.append(cast(part))
    return out


def _fraction(text):
    if "/" in text:
        a, b = text.split("/")
        return float(a) / float(b)
    return float(text)


def _bool(text):
    t = text.lower()
    if t in ("true", "yes", "1"):
        return True
    if t in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _weights(text):
    lo, _, hi = text.partition("..")
    lo = int(lo)
    return (lo, int(hi) if hi else lo)


def _algorithm(text):
    if text not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {text!r}")
    return text


def _optional(cast):
    return lambda t: None if t.lower() == "none" else cast(t)


_FIELDS = {
    "name": str,
    "algorithm": _algorithm,
    "graph": str,
    "n": int,
    "weights": _weights,
    "p": _optional(float),
    "r": _optional(float),
    "tail": _optional(int),
    "lb_p": float,
    "x": _fraction,
    "y": _fraction,
    "eps": _fraction,
    "sources": str,
    "source_count": _optional(int),
    "h_const": float,
    "gamma_const": float,
    "sampler_const": float,
    "theta": float,
    "seeds": lambda t: _num_list(t, int),
    "verify": _bool,
    "sizes": lambda t: _num_list(t, int),
    "distances": _bool,
    "max_retries": int,
}


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    """Parse flat `key = value` lines; `#` starts a comment."""
    sc = Scenario(name=name)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ScenarioError(f"line {lineno}: unknown key {key!r}")
        try:
            setattr(sc, key, _FIELDS[key](value))
        except ValueError as exc:
            raise ScenarioError(f"line {lineno}: bad value for {key}: {exc}") from None
    if not sc.seeds:
        raise ScenarioError("no seeds given")
    return sc


def load_scenario(path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(), name=path.stem)


# ---------------------------------------------------------------------------
# graphs and sources


def make_graph(sc: Scenario, seed: int, n: Optional[int] = None):
    """Returns (graph, lower-bound info or None)."""
    n = n or sc.n
    if sc.graph.startswith("file:"):
        return read_graph(sc.graph[5:]), None
    if sc.graph == "lower-bound":
        g, _, info = gen_lower_bound_graph(n, sc.lb_p, seed)
        return g, info
    params = {k: v for k, v in (("p", sc.p), ("r", sc.r), ("tail", sc.tail)) if v is not None}
    return gen_random_graph(n, sc.graph, sc.weights, seed=seed, **params), None


def pick_sources(sc: Scenario, g: WeightedGraph, seed: int, info=None) -> np.ndarray:
    n = g.n
    if sc.sources not in ("auto", "lower-bound"):
        return np.array(_num_list(sc.sources, int), dtype=np.int64)
    rng = np.random.default_rng([seed, 7])
    if sc.sources == "lower-bound":
        if info is None:
            raise ScenarioError("sources = lower-bound needs graph = lower-bound")
        # random sources, keeping those whose id lies in the fair-coin range
        picked = np.flatnonzero(rng.random(info["y"]) < sc.lb_p)
        return picked if len(picked) else np.array([0])
    if sc.algorithm in ("hybridExactSSSP", "oracleSSSP"):
        return np.array([0])
    if sc.algorithm == "exactN13SSP":
        k = sc.source_count or math.ceil(n ** (1 / 3))
    else:
        k = sc.source_count or math.ceil(n**sc.y)
    return np.sort(rng.choice(n, size=min(k, n), replace=False))


# ---------------------------------------------------------------------------
# one seed


@dataclass
class SeedResult:
    seed: int
    n: int
    m: int
    rounds: int = 0
    retries: int = 0
    drops: int = 0
    max_error: float = 0.0
    violations: int = 0
    status: str = "ok"
    ledger: Optional[str] = None
    distances: Optional[list] = None  # (source, node, dist) rows
    transcript: Optional[list] = None
    value: Optional[float] = None  # scalar outputs (diameters)
    info: dict = field(default_factory=dict)  # algorithm counters, not written to csv


def _apsp_rows(g, sources):
    return np.array([dijkstra(g, int(s)).dist for s in sources]).T  # (n, k)


def _compare_exact(est, truth):
    est, truth = np.asarray(est, float), np.asarray(truth, float)
    both = np.isfinite(truth) & np.isfinite(est)
    err = float(np.abs(est[both] - truth[both]).max(initial=0.0))
    bad = int((np.isfinite(truth) != np.isfinite(est)).sum() + (est[both] != truth[both]).sum())
    return err, bad


def _compare_envelope(est, truth, lo_factor, hi_factor):
    """Count entries outside truth*lo_factor <= est <= truth*hi_factor."""
    est, truth = np.asarray(est, float), np.asarray(truth, float)
    tol = 1e-9 * np.maximum(1.0, np.abs(truth))
    bad = int(((est < truth * lo_factor - tol) | (est > truth * hi_factor + tol)).sum())
    return float(np.abs(est - truth).max(initial=0.0)), bad


def _session(sc, g, seed, transcript):
    cfg = HybridConfig(gamma_const=sc.gamma_const, seed=seed)
    return Network(g, cfg, transcript=[] if transcript else None)


def run_seed(sc: Scenario, seed: int, n: Optional[int] = None, transcript=False, verify=None) -> SeedResult:
    verify = sc.verify if verify is None else verify
    g, info = make_graph(sc, seed, n)
    res = SeedResult(seed, g.n, g.m)
    net = _session(sc, g, seed, transcript)
    kw = dict(net=net, h_const=sc.h_const, sampler_const=sc.sampler_const, max_retries=sc.max_retries)
    try:
        _dispatch(sc, g, seed, info, kw, res, verify)
    except (algos.RetriesExhausted, algos.RetryableError, ValueError, RuntimeError) as exc:
        res.status = f"error:{type(exc).__name__}"
    res.rounds = net.ledger.total_rounds
    res.drops = net.ledger.drops
    res.ledger = net.ledger.to_csv()
    res.transcript = net.transcript
    return res


def _table(sources, dist):
    rows = []
    for j, s in enumerate(np.asarray(sources).tolist()):
        for v in range(dist.shape[0]):
            rows.append((s, v, dist[v, j]))
    return rows


def _dispatch(sc, g, seed, info, kw, res, verify):
    alg = sc.algorithm
    net = kw["net"]
    if alg == "oracleSSSP":
        s = int(pick_sources(sc, g, seed)[0])
        t = AbstractTransport(g.degree)
        d = algos.oracle_sssp(g, s, t)
        net.charge("oracle", t.oracle_rounds)
        _finish_exact(res, verify, g, [s], d[:, None], sc)
    elif alg == "hybridExactSSSP":
        s = int(pick_sources(sc, g, seed)[0])
        out = algos.hybrid_exact_sssp(g, s, **kw)
        res.retries = out.retries
        _finish_exact(res, verify, g, [s], out.value[:, None], sc)
    elif alg == "tieredAPSP":
        t = AbstractTransport(g.degree)
        d = algos.tiered_apsp(g, t)
        net.charge("tiered", t.tiered_rounds)
        net.charge("cc", t.cc_rounds)
        _finish_exact(res, verify, g, np.arange(g.n), d, sc)
    elif alg == "skeletonAPSP":

        def body(ctx):
            marks = sample_marks(g.n, sc.x, ctx.rng("marks"))
            if len(marks) == 0:
                raise algos.SkeletonDisconnected("no marks")
            sk = build_skeleton(g, marks, sc.x, ctx.h_const, ctx.net)
            return algos.skeleton_apsp(ctx, sk), sk.marks, {}

        out = algos.run_with_retries(g, body, **kw)
        res.retries = out.retries
        marks = out.sources
        if verify:
            truth = _apsp_rows(g, marks)[marks]
            res.max_error, res.violations = _compare_exact(out.value, truth)
    elif alg == "rssp":
        out = algos.rssp(g, sc.x, **kw)
        res.retries = out.retries
        _finish_exact(res, verify, g, out.sources, out.value, sc)
    elif alg == "exactN13SSP":
        U = pick_sources(sc, g, seed)
        out = algos.exact_n13_ssp(g, U, theta=sc.theta, **kw)
        res.retries = out.retries
        res.info = {k: out.info[k] for k in ("sparse", "dense")}
        _finish_exact(res, verify, g, U, out.value, sc)
    elif alg == "reassignSkeletons":
        _run_reassign(sc, g, seed, kw, res)
    elif alg == "approxMSSP":
        U = pick_sources(sc, g, seed, info)
        out = algos.approx_mssp(g, U, sc.eps, **kw)
        res.retries = out.retries
        if verify:
            alpha = 1 + sc.eps if g.unweighted else 3.0
            res.max_error, res.violations = _compare_envelope(out.value, _apsp_rows(g, U), 1.0, alpha)
            if info is not None:
                res.violations += lower_bound_violations(g, info)
        if sc.distances:
            res.distances = _table(U, out.value)
    elif alg in ("eccUnweighted", "eccWeighted"):
        if alg == "eccUnweighted":
            out = algos.ecc_unweighted(g, sc.eps, **kw)
            lo = 1 / (1 + sc.eps)
        else:
            out = algos.ecc_weighted(g, **kw)
            lo = 1 / 3
        res.retries = out.retries
        if verify:
            res.max_error, res.violations = _compare_envelope(out.value, brute_eccentricities(g), lo, 1.0)
    elif alg in ("diameterUnweighted", "diameterWeighted"):
        if alg == "diameterUnweighted":
            out = algos.diameter_unweighted(g, sc.eps, **kw)
            lo = 1 / (1 + sc.eps)
        else:
            out = algos.diameter_weighted(g, **kw)
            lo = 0.5
        res.retries = out.retries
        res.value = out.value
        if verify:
            diam = brute_eccentricities(g).max()
            res.max_error, res.violations = _compare_envelope([out.value], [diam], lo, 1.0)
    elif alg == "tokenDissemination":
        k = sc.source_count or g.n
        owners = np.random.default_rng([seed, 11]).integers(0, g.n, size=k)
        out = token_dissemination(net, owners, keep_knowledge=verify)
        res.retries = out.attempts - 1
        if verify:
            from .comm import _popcount

            res.violations = int((_popcount(out.knowledge) != k).sum())
    elif alg == "aggregateAndBroadcast":
        vals = np.random.default_rng([seed, 13]).integers(0, 1000, size=g.n)
        got = aggregate_and_broadcast(net, vals, np.add)
        if verify:
            res.violations = int((got != vals.sum()).sum())
    elif alg == "skeletonProperties":
        marks = sample_marks(g.n, sc.x, net.rng("marks"))
        sk = build_skeleton(g, marks, sc.x, sc.h_const, net)
        rep = verify_properties(g, sk)
        res.violations = sum(not ok for ok in (rep.connected, rep.distance_preserving, rep.coverage, rep.size_ok))
    elif alg in ("oracleSimulation", "tieredSimulation"):
        _run_model_sim(sc, g, net, res)
    else:  # pragma: no cover - parse_scenario rejects unknown names
        raise ScenarioError(alg)


def _run_model_sim(sc, g, net, res):
    """Compare a simulated model round over a skeleton with the abstract executor."""
    marks = sample_marks(g.n, sc.x, net.rng("marks"))
    sk = build_skeleton(g, marks, sc.x, sc.h_const, net)
    deg = sk.degree
    rng = net.rng("payload")
    if sc.algorithm == "oracleSimulation":
        bad = 0
        for direction in (TO_ORACLE, FROM_ORACLE):
            out = {v: rng.integers(0, 1 << 30, size=rng.integers(0, d + 1)).tolist() for v, d in enumerate(deg.tolist()) if d}
            spec = OracleRoundSpec(out, direction)
            want = oracle_model_round(spec, deg)
            got = simulate_oracle_round_in_hybrid(net, sk, spec)
            bad += int(want.oracle != got.oracle or want.messages != got.messages)
        res.violations = bad
        return
    spec = TieredRoundSpec(deg.astype(np.int64))
    want = tiered_model_round(spec, deg)
    got = simulate_tiered_round_in_hybrid(net, sk, spec, sc.sampler_const)
    res.retries = got.attempts - 1
    delivered = got.covered & want.covered
    res.violations = int((delivered != want.covered).sum())


def lower_bound_violations(g, info) -> int:
    """hop(a, u) must be L+1 on S_b and x+1 on S_c."""
    hop = hop_distances(g, info["a"])
    bad = sum(int(hop[u]) != info["L"] + 1 for u in info["S_b"])
    bad += sum(int(hop[u]) != info["x"] + 1 for u in info["S_c"])
    return bad


def _finish_exact(res, verify, g, sources, est, sc):
    if verify:
        res.max_error, res.violations = _compare_exact(est, _apsp_rows(g, sources))
    if sc.distances:
        res.distances = _table(sources, est)


def _run_reassign(sc, g, seed, kw, res):
    """Members: ceil(n^(1/3)) random nodes; checks non-empty helper sets and helper load <= 3 ln n."""
    members = np.zeros(g.n, dtype=bool)
    k = sc.source_count or math.ceil(g.n ** (1 / 3))
    members[np.random.default_rng([seed, 7]).choice(g.n, size=min(k, g.n), replace=False)] = True

    def body(ctx):
        marks = sample_marks(g.n, sc.x, ctx.rng("marks"))
        sk = build_skeleton(g, marks, sc.x, ctx.h_const, ctx.net)
        return algos.reassign_skeletons(ctx, sk, members), None, {}

    out = algos.run_with_retries(g, body, **kw)
    res.retries = out.retries
    loads = algos.helper_loads(out.value)
    res.max_error = float(max(loads.values(), default=0))
    res.violations = int(sum(1 for v in loads.values() if v > 3 * math.log(g.n)))


# ---------------------------------------------------------------------------
# batches and files


RESULT_FIELDS = ["scenario", "algorithm", "seed", "n", "m", "rounds", "retries", "drops", "max_error", "violations", "status"]


@dataclass
class RunResult:
    scenario: Scenario
    seeds: list

    @property
    def ok(self) -> bool:
        return all(r.status == "ok" and r.violations == 0 for r in self.seeds)

    def results_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(RESULT_FIELDS)
        for r in self.seeds:
            wr.writerow(
                [self.scenario.name, self.scenario.algorithm, r.seed, r.n, r.m, r.rounds, r.retries, r.drops, _fmt(r.max_error), r.violations, r.status]
            )
        return buf.getvalue()

    def ledger_csv(self) -> str:
        lines = ["seed,phase,rounds,localMsgs,globalMsgs,drops"]
        for r in self.seeds:
            for row in (r.ledger or "").splitlines()[1:]:
                lines.append(f"{r.seed},{row}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        rs = self.seeds
        rounds = [r.rounds for r in rs]
        lines = [
            f"scenario {self.scenario.name}",
            f"algorithm {self.scenario.algorithm}",
            f"runs {len(rs)}",
            f"ok {sum(r.status == 'ok' for r in rs)}",
            f"violations {sum(r.violations for r in rs)}",
            f"max_error {_fmt(max((r.max_error for r in rs), default=0.0))}",
            f"max_retries {max((r.retries for r in rs), default=0)}",
            f"drops {sum(r.drops for r in rs)}",
            f"median_rounds {_fmt(float(np.median(rounds)) if rounds else 0.0)}",
            f"verdict {'PASS' if self.ok else 'FAIL'}",
        ]
        return "\n".join(lines) + "\n"


def _fmt(x) -> str:
    x = float(x)
    if math.isinf(x):
        return "inf"
    return repr(int(x)) if x == int(x) else f"{x:.6g}"


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def run_scenario(sc: Scenario, out_dir=None, threads=1, transcript=False, verify=None) -> RunResult:
    """Run every seed; rows are ordered by seed. Writes results.csv, ledger.csv, summary.txt when out_dir is set."""
    rows = _map(lambda s: run_seed(sc, s, transcript=transcript, verify=verify), sorted(sc.seeds), threads)
    result = RunResult(sc, rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.csv").write_text(result.results_csv())
        (out / "ledger.csv").write_text(result.ledger_csv())
        (out / "summary.txt").write_text(result.summary())
        if sc.distances:
            with open(out / "distances.csv", "w") as fh:
                fh.write("seed,source,node,dist\n")
                for r in rows:
                    for s, v, d in r.distances or []:
                        fh.write(f"{r.seed},{s},{v},{_fmt(d)}\n")
        if transcript:
            for r in rows:
                (out / f"transcript_seed{r.seed}.txt").write_text("\n".join(r.transcript or []) + "\n")
    return result


def audit_transcript(lines, gamma: int) -> int:
    """Count (round, node) pairs whose global words sent or received exceed gamma."""
    sent, recv = {}, {}
    for ln in lines:
        rnd, a, b, channel, words = ln.split()
        if channel != "global":
            continue
        w = int(words)
        sent[(rnd, a)] = sent.get((rnd, a), 0) + w
        recv[(rnd, b)] = recv.get((rnd, b), 0) + w
    return sum(v > gamma for v in sent.values()) + sum(v > gamma for v in recv.values())


# ---------------------------------------------------------------------------
# scaling sweeps


@dataclass
class SweepResult:
    algorithm: str
    sizes: list
    medians: list
    per_seed: dict
    slope: float
    loglog: Optional[float] = None

    def table_csv(self) -> str:
        lines = ["size,median_rounds,seeds"]
        for s, med in zip(self.sizes, self.medians):
            lines.append(f"{s},{_fmt(med)},{len(self.per_seed[s])}")
        return "\n".join(lines) + "\n"


def fit_slope(sizes, medians):
    """Least squares of log(rounds) on log(size); adds a log log term with >= 4 sizes."""
    x = np.log(np.asarray(sizes, dtype=float))
    y = np.log(np.asarray(medians, dtype=float))
    cols = [x, np.ones_like(x)]
    if len(sizes) >= 4:
        cols.insert(1, np.log(x))
    coef, *_ = np.linalg.lstsq(np.stack(cols, axis=1), y, rcond=None)
    return float(coef[0]), (float(coef[1]) if len(sizes) >= 4 else None)


def sweep_rounds(sc: Scenario, res: SeedResult) -> int:
    """Rounds that count for the sweep: the td phase alone for token dissemination."""
    if sc.algorithm == "tokenDissemination":
        for row in res.ledger.splitlines()[1:]:
            phase, rounds = row.split(",")[:2]
            if phase == "td":
                return int(rounds)
        return 0
    return res.rounds


def scaling_sweep(sc: Scenario, sizes=None, threads=1) -> SweepResult:
    """Median rounds per size and the fitted exponent.

    For tokenDissemination the sweep varies the token count k at fixed n.
    """
    sizes = list(sizes or sc.sizes)
    if len(sizes) < 3 or len(sc.seeds) < 3:
        raise ScenarioError("a sweep needs at least 3 sizes and 3 seeds")
    per = {}
    for size in sizes:
        if sc.algorithm == "tokenDissemination":
            sub = Scenario(**{**sc.__dict__, "source_count": size})
            fn = lambda s, sub=sub: run_seed(sub, s, verify=False)
        else:
            fn = lambda s, size=size: run_seed(sc, s, n=size, verify=False)
        rows = _map(fn, sorted(sc.seeds), threads)
        bad = [r for r in rows if r.status != "ok"]
        if bad:
            raise RuntimeError(f"sweep run failed at size {size}: {bad[0].status}")
        per[size] = [sweep_rounds(sc, r) for r in rows]
    medians = [float(np.median(per[s])) for s in sizes]
    slope, ll = fit_slope(sizes, medians)
    return SweepResult(sc.algorithm, sizes, medians, per, slope, ll)


def write_sweep(res: SweepResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(res.table_csv())
    text = f"algorithm {res.algorithm}\nslope {res.slope:.4f}\n"
    if res.loglog is not None:
        text += f"loglog {res.loglog:.4f}\n"
    (out / "summary.txt").write_text(text)
