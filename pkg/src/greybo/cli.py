"""Command-line entry point: ``greybo validate|run|metrics|compare``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigParse, GreyBoxError
from .experiment import compare, load_config, parse_seeds, run_experiment
from .metrics import metrics_from_csv, write_metrics_csv
from .problem import load


def _describe(problem, label: str) -> list[str]:
    lines = [f"{label}: input_dim={problem.input_dim} constraints={problem.K} "
             f"black-box functions={len(problem.keys)} total nodes={problem.total_nodes}"]
    for gi, g in enumerate(problem.graphs):
        A = problem.discrepancy(gi)
        consts = " ".join(f"A_{i}={a:.4g}" for i, a in A.items())
        lines.append(f"  {g.name}: {g.m} nodes, white={list(g.white_set)} "
                     f"black={list(g.black_set)} {consts}".rstrip())
    gt = problem.ground_truth
    if gt is not None:
        lines.append(f"  ground truth: f*={gt.f_star} at {gt.x_star} (grid {gt.resolution})")
    return lines


def cmd_validate(args) -> int:
    path = Path(args.target)
    if path.suffix == ".json":
        print("\n".join(_describe(load(path), path.name)))
        print("ok")
        return 0
    cfg = load_config(path)
    seed = cfg.seeds[0]
    for spec in cfg.problems:
        print("\n".join(_describe(spec.build(seed), f"problem.{spec.name} (seed {seed})")))
    print("ok")
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seeds:
        cfg = replace(cfg, seeds=parse_seeds(args.seeds))
    if args.T is not None:
        cfg = replace(cfg, run=replace(cfg.run, T=args.T))
    if args.mode:
        cfg = replace(cfg, modes=(args.mode,))
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    out = args.out or cfg.out or str(Path("results") / cfg.name)
    path = run_experiment(cfg, out)
    print(f"wrote {len(cfg.problems) * len(cfg.modes) * len(cfg.seeds)} runs to {path}")
    return 0


def cmd_metrics(args) -> int:
    ms = metrics_from_csv(args.trace)
    for k, v in ms.final().items():
        print(f"{k} = {v}")
    if args.out:
        write_metrics_csv(ms, args.out)
    return 0


def cmd_compare(args) -> int:
    for row in compare(args.dir):
        print("  ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                        for k, v in row.items()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="greybo", description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True)

    v = sub.add_parser("validate", help="check a problem JSON or an experiment config")
    v.add_argument("target")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--seeds", help="override seeds, e.g. '0-9' or '1,4,7'")
    r.add_argument("--T", type=int, help="override the horizon")
    r.add_argument("--mode", choices=["greybox", "blackbox"], help="run a single mode")
    r.add_argument("--out", help="results directory")
    r.add_argument("--workers", type=int, help="parallel worker processes")
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("metrics", help="summarize one run CSV")
    m.add_argument("trace")
    m.add_argument("--out", help="write the per-step metric series to this CSV")
    m.set_defaults(func=cmd_metrics)

    c = sub.add_parser("compare", help="compare modes in a results directory")
    c.add_argument("dir")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigParse as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (GreyBoxError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
