"""Command line: run, sweep and verify scenario files; generate graphs."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .graph import gen_lower_bound_graph, gen_random_graph, write_graph, write_roles
from .harness import ScenarioError, load_scenario, run_scenario, scaling_sweep, write_sweep


def parse_graph_spec(spec: str) -> dict:
    """`model:key=value,...`, e.g. `erdos-renyi:n=512,p=0.05,weights=1..20,seed=3`."""
    model, _, rest = spec.partition(":")
    out = {"model": model}
    for part in filter(None, rest.split(",")):
        key, eq, value = part.partition("=")
        if not eq:
            raise ValueError(f"bad graph spec item {part!r}")
        out[key.strip()] = value.strip()
    return out


def gen_graph(spec: str, out: str) -> None:
    opts = parse_graph_spec(spec)
    model = opts.pop("model")
    n = int(opts.pop("n"))
    seed = int(opts.pop("seed", 0))
    if model == "lower-bound":
        g, roles, _ = gen_lower_bound_graph(n, float(opts.pop("p", 0.5)), seed)
        write_graph(g, out)
        write_roles(roles, out + ".roles")
        return
    lo, _, hi = opts.pop("weights", "1").partition("..")
    params = {}
    for key in ("p", "r"):
        if key in opts:
            params[key] = float(opts.pop(key))
    if "tail" in opts:
        params["tail"] = int(opts.pop("tail"))
    if opts:
        raise ValueError(f"unknown graph spec keys: {sorted(opts)}")
    g = gen_random_graph(n, model, (int(lo), int(hi or lo)), seed=seed, **params)
    write_graph(g, out)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="hybridsim", description="Hybrid-model distance algorithm experiments")
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name, text in (
        ("run", "run a scenario"),
        ("sweep", "fit the round-scaling exponent over the scenario's sizes"),
        ("verify", "run with oracle verification; exit 1 on any violation"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("scenario")
        p.add_argument("--out-dir", default=None)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--transcript", action="store_true", help="record global-channel transcripts")
    p = sub.add_parser("gen-graph", help="write a generated graph")
    p.add_argument("spec")
    p.add_argument("out")
    args = ap.parse_args(argv)

    try:
        if args.cmd == "gen-graph":
            gen_graph(args.spec, args.out)
            return 0
        sc = load_scenario(args.scenario)
    except (ScenarioError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out_dir = args.out_dir or str(Path("runs") / sc.name)
    if args.cmd == "sweep":
        res = scaling_sweep(sc, threads=args.threads)
        write_sweep(res, out_dir)
        print(res.table_csv(), end="")
        print(f"slope {res.slope:.4f}")
        return 0
    res = run_scenario(sc, out_dir, threads=args.threads, transcript=args.transcript, verify=True if args.cmd == "verify" else None)
    print(res.summary(), end="")
    if args.cmd == "verify" and not res.ok:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
