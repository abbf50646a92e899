"""Seed sweeps driven by an INI config file.

Config layout::

    [experiment]
    name = lp_demo
    seeds = 0-3            ; "0, 1, 5" or inclusive ranges "0-3"
    modes = greybox, blackbox
    T = 50
    delta = 0.1
    sigma = 0.01
    lambda = auto          ; or a positive number
    doubling = false
    beta_scale = 1.0
    workers = 1

    [solver]               ; optional, every key optional
    phase1_points = 2048
    refine_starts = 5
    refine_iters = 200
    infeasibility_tolerance = 1e-6

    [problem.lp]           ; one section per problem
    family = lp_gp         ; lp_gp | composite | one_layer | margin | file
    n_constraints = 2      ; remaining keys go to the generator
    ; instance_seed = 7    ; fixed instance; default: the run seed

A results directory holds ``runs/<problem>__<mode>__s<seed>.csv`` (one per
run), ``aggregate.csv``, ``manifest.json`` and ``plot_results.py``.
"""

from __future__ import annotations

import ast
import configparser
import csv
import json
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .acquisition import SolverBudget
from .benchmarks import GENERATORS
from .errors import ConfigParse, MissingGroundTruth
from .loop import RunConfig, run
from .metrics import MetricSeries, aggregate, metrics_from_csv, read_trace_csv, series
from .problem import Problem, load

RUNS_DIR = "runs"
AGGREGATE = "aggregate.csv"
MANIFEST = "manifest.json"
PLOT_SCRIPT = "plot_results.py"

_EXPERIMENT_KEYS = {"name", "seeds", "modes", "t", "delta", "sigma", "lambda", "doubling",
                    "beta_scale", "workers", "out"}
_SOLVER_KEYS = {"phase1_points": int, "refine_starts": int, "refine_iters": int,
                "infeasibility_tolerance": float, "x_grid": int, "theta_grid": int}


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    family: str
    params: dict = field(default_factory=dict)
    instance_seed: int | None = None
    path: str | None = None

    def build(self, seed: int) -> Problem:
        if self.family == "file":
            return load(self.path)
        gen = GENERATORS[self.family]
        s = self.instance_seed if self.instance_seed is not None else seed
        if self.family == "composite":
            params = dict(self.params)
            return gen(params.pop("variant"), s, **params)
        return gen(s, **self.params)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seeds: tuple[int, ...]
    modes: tuple[str, ...]
    run: RunConfig
    problems: tuple[ProblemSpec, ...]
    workers: int = 1
    out: str | None = None


def parse_seeds(text: str) -> tuple[int, ...]:
    seeds = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        m = re.fullmatch(r"(\d+)\s*-\s*(\d+)", part)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if hi < lo:
                raise ValueError(f"empty seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("no seeds given")
    return tuple(seeds)


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    current = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if key is None and current == section:
                return no
            continue
        if current == section and key is not None:
            k = re.split(r"[=:]", line, maxsplit=1)[0].strip()
            if k.lower() == key.lower():
                return no
    return None


def _literal(value: str):
    try:
        return ast.literal_eval(value)
    except (ValueError, SyntaxError):
        return value


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    return parse_config(text, base=Path(path).parent)


def parse_config(text: str, base: Path | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigParse("malformed line", line=line) from exc
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigParse(exc.message, line=exc.lineno,
                          field=getattr(exc, "option", None)) from exc
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigParse("content before the first [section]", line=exc.lineno) from exc
    except configparser.Error as exc:
        raise ConfigParse(str(exc)) from exc

    def fail(msg, section, key=None):
        raise ConfigParse(msg, line=_line_of(text, section, key),
                          field=f"{section}.{key}" if key else section)

    if not cp.has_section("experiment"):
        raise ConfigParse("missing [experiment] section")
    exp = {k.lower(): (k, v) for k, v in cp.items("experiment")}
    for k in exp:
        if k not in _EXPERIMENT_KEYS:
            fail(f"unknown key {exp[k][0]!r}", "experiment", exp[k][0])

    def get(key, conv, default):
        if key not in exp:
            return default
        raw_key, raw = exp[key]
        try:
            return conv(raw)
        except (ValueError, TypeError) as err:
            fail(f"bad value {raw!r}: {err}", "experiment", raw_key)

    def boolean(v):
        v = v.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError("expected true or false")

    def modes(v):
        out = tuple(m.strip() for m in v.split(",") if m.strip())
        bad = [m for m in out if m not in ("greybox", "blackbox", "blackbox_baseline")]
        if bad or not out:
            raise ValueError(f"modes must be greybox and/or blackbox, got {v!r}")
        return tuple("blackbox" if m == "blackbox_baseline" else m for m in out)

    def lam(v):
        return None if v.strip().lower() == "auto" else float(v)

    budget = {}
    if cp.has_section("solver"):
        for k, v in cp.items("solver"):
            conv = _SOLVER_KEYS.get(k.lower())
            if conv is None:
                fail(f"unknown key {k!r}", "solver", k)
            try:
                budget[k.lower()] = conv(v)
            except ValueError as err:
                fail(f"bad value {v!r}: {err}", "solver", k)
    try:
        solver = SolverBudget(**budget)
    except ValueError as err:
        fail(str(err), "solver")

    try:
        rc = RunConfig(
            T=get("t", int, 50),
            delta=get("delta", float, 0.1),
            sigma=get("sigma", float, 0.01),
            lam=get("lambda", lam, None),
            budget=solver,
            doubling=get("doubling", boolean, False),
            beta_scale=get("beta_scale", float, 1.0),
        )
    except ValueError as err:
        fail(str(err), "experiment")

    problems = []
    for section in cp.sections():
        if not section.startswith("problem."):
            if section not in ("experiment", "solver"):
                fail(f"unknown section [{section}]", section)
            continue
        pname = section[len("problem."):]
        if not re.fullmatch(r"[A-Za-z0-9_\-]+", pname):
            fail("problem names may use letters, digits, '_' and '-'", section)
        items = {k: v for k, v in cp.items(section)}
        family = items.pop("family", None)
        if family is None:
            fail("missing key 'family'", section)
        if family not in GENERATORS and family != "file":
            fail(f"unknown family {family!r}", section, "family")
        inst = items.pop("instance_seed", None)
        if inst is not None:
            try:
                inst = int(inst)
            except ValueError:
                fail(f"bad value {inst!r}", section, "instance_seed")
        path = None
        if family == "file":
            if "path" not in items:
                fail("family 'file' needs a 'path'", section)
            path = str((base or Path(".")) / items.pop("path"))
        params = {k: _literal(v) for k, v in items.items()}
        if family == "composite" and "variant" not in params:
            fail("composite problems need a 'variant'", section)
        problems.append(ProblemSpec(pname, family, params, inst, path))
    if not problems:
        raise ConfigParse("config defines no [problem.NAME] section")

    return ExperimentConfig(
        name=get("name", str, "experiment"),
        seeds=get("seeds", parse_seeds, (0,)),
        modes=get("modes", modes, ("greybox",)),
        run=rc,
        problems=tuple(problems),
        workers=get("workers", int, 1),
        out=get("out", str, None),
    )


def run_file_name(problem: str, mode: str, seed: int) -> str:
    return f"{problem}__{mode}__s{seed}.csv"


def _job(args):
    spec, mode, seed, rc, path = args
    problem = spec.build(seed)
    trace = run(problem, replace(rc, seed=seed, mode=mode))
    trace.to_csv(path)
    outcome = {"kind": trace.outcome.kind, "t": getattr(trace.outcome, "t", None)}
    return {"problem": spec.name, "mode": mode, "seed": seed, "file": Path(path).name,
            "steps": len(trace.records), "outcome": outcome, "K": problem.K}


def run_experiment(cfg: ExperimentConfig, out_dir) -> Path:
    """Run every (problem, mode, seed) job and write the results directory."""
    out = Path(out_dir)
    runs = out / RUNS_DIR
    runs.mkdir(parents=True, exist_ok=True)
    jobs = [(spec, mode, seed, cfg.run, str(runs / run_file_name(spec.name, mode, seed)))
            for spec in cfg.problems for mode in cfg.modes for seed in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]

    write_aggregate(out, results)
    manifest = {"name": cfg.name, "T": cfg.run.T, "seeds": list(cfg.seeds),
                "modes": list(cfg.modes), "runs": results}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / PLOT_SCRIPT).write_text(plot_script())
    return out


def write_aggregate(out: Path, results: list[dict]) -> None:
    """Median and quartiles per (problem, mode, t), recomputed from the run CSVs."""
    groups: dict[tuple[str, str], list[dict]] = {}
    for r in results:
        groups.setdefault((r["problem"], r["mode"]), []).append(r)
    kmax = max((r["K"] for r in results), default=0)
    names = ["cr", "positive_regret"] + [f"V{k + 1}" for k in range(kmax)]
    header = ["problem", "mode", "t", "runs"]
    for n in names:
        header += [f"{n}_median", f"{n}_q25", f"{n}_q75"]
    rows = []
    for (pname, mode), rs in groups.items():
        per_run = [_series(out / RUNS_DIR / r["file"]) for r in rs]
        length = max((s.t.size for s in per_run), default=0)
        # problems without a known optimum (infeasible ones) only get violation curves
        has_regret = all(not np.isnan(s.regret).any() for s in per_run)
        empty = {q: np.zeros(0) for q in ("median", "q25", "q75")}
        stats = {
            "cr": aggregate([s.constrained_regret for s in per_run], length)
            if has_regret else empty,
            "positive_regret": aggregate([s.cumulative_positive_regret for s in per_run], length)
            if has_regret else empty,
        }
        for k in range(kmax):
            stats[f"V{k + 1}"] = aggregate(
                [s.cumulative_violation[:, k] if k < s.K else np.zeros(0) for s in per_run], length)
        for j in range(length):
            row = [pname, mode, j + 1, len(per_run)]
            for n in names:
                st = stats[n]
                row += ["" if st["median"].size <= j else repr(float(st[q][j]))
                        for q in ("median", "q25", "q75")]
            rows.append(row)
    with open(out / AGGREGATE, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _series(path: Path) -> MetricSeries:
    try:
        return metrics_from_csv(path)
    except MissingGroundTruth:
        cols = read_trace_csv(path)
        viol = sorted((c for c in cols if c.startswith("viol")), key=lambda c: int(c[4:]))
        n = cols["t"].size
        V = np.column_stack([cols[c] for c in viol]) if viol else np.zeros((n, 0))
        ms = series(np.zeros(n), V, cols["t"])
        nan = np.full(n, np.nan)
        return replace(ms, regret=nan, cumulative_regret=nan, cumulative_positive_regret=nan,
                       constrained_regret=nan)


def plot_script() -> str:
    return '''"""Plot median curves with interquartile bands from aggregate.csv.

Usage: python plot_results.py [results_dir]
"""
import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
PANELS = [("cr", "constrained regret"), ("positive_regret", "cumulative positive regret"),
          ("V1", "cumulative violation, constraint 1"), ("V2", "cumulative violation, constraint 2")]

data = defaultdict(lambda: defaultdict(list))
with open(root / "aggregate.csv", newline="") as fh:
    for row in csv.DictReader(fh):
        data[row["problem"]][row["mode"]].append(row)

for problem, modes in data.items():
    fig, axes = plt.subplots(1, 4, figsize=(18, 4))
    for ax, (col, title) in zip(axes, PANELS):
        for mode, rows in sorted(modes.items()):
            if not rows or not rows[0].get(col + "_median"):
                continue
            t = [int(r["t"]) for r in rows]
            med = [float(r[col + "_median"]) for r in rows]
            lo = [float(r[col + "_q25"]) for r in rows]
            hi = [float(r[col + "_q75"]) for r in rows]
            ax.plot(t, med, label=mode)
            ax.fill_between(t, lo, hi, alpha=0.25)
        ax.set_title(title)
        ax.set_xlabel("step")
        ax.legend()
    fig.tight_layout()
    fig.savefig(root / f"{problem}.png", dpi=120)
    print("wrote", root / f"{problem}.png")
'''


def compare(out_dir) -> list[dict]:
    """Final-step medians per mode and per-seed win rate of greybox over blackbox."""
    out = Path(out_dir)
    manifest = json.loads((out / MANIFEST).read_text())
    by_problem: dict[str, dict[str, dict[int, float]]] = {}
    for r in manifest["runs"]:
        ms = _series(out / RUNS_DIR / r["file"])
        cr = float(ms.constrained_regret[-1]) if ms.t.size else float("nan")
        by_problem.setdefault(r["problem"], {}).setdefault(r["mode"], {})[r["seed"]] = cr
    summary = []
    for pname, modes in by_problem.items():
        row = {"problem": pname}
        for mode, vals in sorted(modes.items()):
            row[f"{mode}_median_cr"] = float(np.median(list(vals.values())))
        if "greybox" in modes and "blackbox" in modes:
            common = sorted(set(modes["greybox"]) & set(modes["blackbox"]))
            wins = [modes["greybox"][s] < modes["blackbox"][s] for s in common]
            row["greybox_win_rate"] = float(np.mean(wins)) if wins else float("nan")
        summary.append(row)
    return summary
