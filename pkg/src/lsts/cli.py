"""Command line: run experiments, compare algorithms, export task graphs."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import ConfigError, LstsError
from .graph import compile_spec, enumerate_paths, to_dot, to_plain
from .harness import compare, format_summary, load_config, read_trials, run_experiment, summarize
from .spec_lang import parse_spec

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED = 0, 2, 3


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lsts", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="run seeded trials from a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--algo", help="algorithm name or comma-separated list (overrides config)")
    run.add_argument("--seeds", type=_int_list, help="comma-separated seeds (overrides config)")
    run.add_argument("--budget", type=int, help="interaction budget per trial (overrides config)")
    run.add_argument("--out", help="output directory (overrides config)")
    run.add_argument("--workers", type=int, help="parallel trial processes")
    run.add_argument("--require-convergence", action="store_true",
                     help="exit with status 3 when any trial ends without converging")

    cmp_ = sub.add_parser("compare", help="summary table and Welch test from a results directory")
    cmp_.add_argument("--in", dest="indir", required=True)
    cmp_.add_argument("--algos", required=True, help="two algorithms, A,B")

    gr = sub.add_parser("graph", help="compile a spec and export its task graph")
    gr.add_argument("--spec", required=True)
    gr.add_argument("--dot", help="write Graphviz output here")
    return ap


def _cmd_run(args) -> int:
    overrides = {
        "algo": args.algo.split(",") if args.algo else None,
        "seeds": args.seeds,
        "budget": args.budget,
        "out": args.out,
        "workers": args.workers,
    }
    cfg = load_config(args.config, overrides)
    records = run_experiment(cfg)
    print(format_summary(summarize(records)))
    print(f"results written to {cfg.out}")
    if args.require_convergence and not all(r.converged for r in records):
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cmd_compare(args) -> int:
    algos = [a for a in args.algos.split(",") if a]
    if len(algos) != 2:
        raise ConfigError("algos", "give exactly two algorithms")
    path = Path(args.indir) / "trials.csv"
    if not path.exists():
        raise ConfigError("in", f"no trials.csv in {args.indir}")
    records = read_trials(path)
    try:
        res = compare(records, *algos)
    except ValueError as exc:
        raise ConfigError("algos", str(exc))
    print(format_summary([res["a"], res["b"]]))
    print(f"Welch t = {res['t']:.4f}  p = {res['p']:.4g}")
    return EXIT_OK


def _cmd_graph(args) -> int:
    try:
        text = Path(args.spec).read_text()
    except OSError as exc:
        raise ConfigError("spec", str(exc))
    g = compile_spec(parse_spec(text))
    print(to_plain(g), end="")
    print(f"# {g.node_count} nodes, {len(g.edges)} edges, {len(enumerate_paths(g))} paths")
    if args.dot:
        Path(args.dot).write_text(to_dot(g))
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "compare": _cmd_compare, "graph": _cmd_graph}[args.cmd]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LstsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
