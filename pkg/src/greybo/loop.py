"""Sequential optimization runs and their traces.

Each step solves the optimistic auxiliary problem on the current posteriors,
evaluates the true functions at the chosen ``x``, queries every black-box node
at its *planned* state ``[x, z_bar]`` (not the true trajectory) and adds the
noisy answers to that node's GP.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .acquisition import NodeModel, SolverBudget, check_plausible, solve_constrained, solve_unconstrained
from .expressions import Oracle
from .gp import ConfidenceModel, GpState, Kernel, default_lambda, posterior
from .graph import BLACK, GreyBoxGraph, NodeSpec, discrepancy_bound, forward_true, planned_state
from .problem import Problem

MODES = ("greybox", "blackbox")
_MODE_ALIASES = {"greybox": "greybox", "blackbox": "blackbox", "blackbox_baseline": "blackbox"}


@dataclass(frozen=True)
class RunConfig:
    T: int = 50
    delta: float = 0.1
    sigma: float = 0.01
    # None means 1 + 2/T (or the per-round value under doubling)
    lam: float | None = None
    budget: SolverBudget = field(default_factory=SolverBudget)
    seed: int = 0
    mode: str = "greybox"
    doubling: bool = False
    beta_scale: float = 1.0
    # kernel for the opaque baseline surrogates; None picks one from the problem
    baseline_kernel: Kernel | None = None

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.lam is not None and self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.mode not in _MODE_ALIASES:
            raise ValueError(f"mode must be one of {sorted(_MODE_ALIASES)}, got {self.mode!r}")
        object.__setattr__(self, "mode", _MODE_ALIASES[self.mode])

    def lam_at(self, t: int) -> float:
        if self.lam is not None:
            return self.lam
        if self.doubling:
            return default_lambda(round_horizon(t))
        return default_lambda(self.T)


def round_horizon(t: int) -> int:
    """Horizon ``2^r`` of the doubling round containing step ``t`` (1-based)."""
    return 1 << (int(t).bit_length() - 1)


def round_ends(cap: int) -> list[int]:
    """Cumulative steps that close a doubling round: 1, 3, 7, 15, ..."""
    out, r = [], 0
    while (2 << r) - 1 <= cap:
        out.append((2 << r) - 1)
        r += 1
    return out


@dataclass(frozen=True)
class Completed:
    kind: str = "completed"


@dataclass(frozen=True)
class InfeasibilityDeclared:
    t: int
    kind: str = "infeasible"


@dataclass
class StepRecord:
    t: int
    x: np.ndarray
    z_true: dict[str, np.ndarray]
    z_bar: dict[str, np.ndarray]
    # (key, planned state, noisy value, lower, upper) with the interval taken before the update
    observations: list[tuple[str, np.ndarray, float, float, float]]
    f: float
    g: np.ndarray
    beta: dict[str, float]
    sd: dict[str, float]
    regret: float
    violations: np.ndarray
    discrepancy_bound: float
    lam: float
    plausible: bool = True

    @property
    def output_gap(self) -> float:
        """``|z_m - z_bar_m|`` on the objective graph."""
        name = next(iter(self.z_true))
        return abs(float(self.z_true[name][-1] - self.z_bar[name][-1]))


@dataclass
class RunTrace:
    records: list[StepRecord]
    outcome: Completed | InfeasibilityDeclared
    keys: list[str]
    input_dim: int
    K: int
    f_star: float | None = None
    mode: str = "greybox"

    @property
    def declared_infeasible(self) -> bool:
        return isinstance(self.outcome, InfeasibilityDeclared)

    def columns(self) -> list[str]:
        return (["t"] + [f"x{j}" for j in range(self.input_dim)] + ["f"]
                + [f"g{k + 1}" for k in range(self.K)] + ["regret"]
                + [f"viol{k + 1}" for k in range(self.K)] + ["cr", "disc_bound"]
                + [f"beta_{key}" for key in self.keys])

    def rows(self) -> list[list]:
        from .metrics import constrained_regret

        regret = np.array([r.regret for r in self.records])
        viol = np.array([r.violations for r in self.records]).reshape(len(self.records), self.K)
        cr = constrained_regret(regret, viol) if self.records else np.zeros(0)
        out = []
        for r, c in zip(self.records, cr):
            out.append([r.t, *r.x.tolist(), r.f, *r.g.tolist(), r.regret, *r.violations.tolist(),
                        float(c), r.discrepancy_bound, *(r.beta[k] for k in self.keys)])
        return out

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        for row in self.rows():
            w.writerow([v if isinstance(v, (int, str)) else repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _models(problem: Problem, states: dict[str, GpState], conf: dict[str, ConfidenceModel]):
    return {k: NodeModel(states[k], conf[k]) for k in problem.keys}


def _step_seed(seed: int, t: int) -> int:
    return int(np.random.SeedSequence([seed, t]).generate_state(1)[0])


def _run(problem: Problem, config: RunConfig, constrained: bool, cap: int) -> RunTrace:
    m = problem.total_nodes
    conf, states = {}, {}
    for key in problem.keys:
        nd = problem.node_for(key)
        conf[key] = ConfidenceModel(nd.rkhs_bound, config.sigma, m, config.delta, config.beta_scale)
        states[key] = GpState.empty(nd.kernel, len(nd.parents), config.lam_at(1))
    noise = np.random.default_rng([config.seed, 1])
    gt = problem.ground_truth
    f_star = None if gt is None else gt.f_star
    A = problem.discrepancy(0)
    solve = solve_constrained if constrained else solve_unconstrained
    records: list[StepRecord] = []
    outcome: Completed | InfeasibilityDeclared = Completed()

    for t in range(1, cap + 1):
        lam = config.lam_at(t)
        if t > 1 and lam != config.lam_at(t - 1):
            states = {k: s.with_lambda(lam) for k, s in states.items()}
        models = _models(problem, states, conf)
        sol = solve(problem, models, config.budget, _step_seed(config.seed, t))
        if constrained and not sol.feasible:
            outcome = InfeasibilityDeclared(t)
            break
        x = sol.x
        z_true = {g.name: forward_true(g, x[None, :])[0] for g in problem.graphs}
        f = float(z_true[problem.objective.name][-1])
        g_vals = np.array([z_true[g.name][-1] for g in problem.constraints])
        beta = {k: models[k].beta for k in problem.keys}

        # planned queries, shared nodes asked once per distinct state
        queries: list[tuple[str, np.ndarray]] = []
        seen = set()
        sd: dict[str, float] = {}
        for gi, nid, key in problem.slots:
            g = problem.graphs[gi]
            s = planned_state(g, nid, x, sol.z_bar[g.name])
            sd[f"{g.name}.{nid}"] = math.sqrt(posterior(states[key], s)[1])
            ident = (key, s.tobytes())
            if ident not in seen:
                seen.add(ident)
                queries.append((key, s))
        plausible = check_plausible(problem, models, x, sol.z_bar)
        obj_name = problem.objective.name
        bound = discrepancy_bound(A, {i: beta[problem.key_of(0, problem.objective.nodes[i])]
                                      for i in A},
                                  {i: sd[f"{obj_name}.{i}"] for i in A})
        observations = []
        for key, s in queries:
            nd = problem.node_for(key)
            y = float(nd.fn(s[None, :])[0])
            if config.sigma > 0:
                y += config.sigma * noise.standard_normal()
            lo, hi = models[key].interval(s)
            observations.append((key, s, y, lo, hi))
            states[key] = states[key].update(s, y)

        regret = f - f_star if f_star is not None else math.nan
        records.append(StepRecord(
            t=t, x=x, z_true=z_true, z_bar=sol.z_bar, observations=observations, f=f,
            g=g_vals, beta=beta, sd=sd, regret=regret, violations=np.maximum(g_vals, 0.0),
            discrepancy_bound=bound, lam=lam, plausible=plausible,
        ))
    return RunTrace(records, outcome, problem.keys, problem.input_dim, problem.K, f_star,
                    config.mode)


def run_unconstrained(problem: Problem, config: RunConfig) -> RunTrace:
    """Optimize the objective graph alone; constraint graphs are ignored."""
    if config.mode == "blackbox":
        return run_blackbox_baseline(Problem(problem.objective, (), problem.ground_truth,
                                             problem.sidecar), config)
    p = Problem(problem.objective, (), problem.ground_truth, problem.sidecar)
    return _run(p, config, constrained=False, cap=config.T)


def run_constrained(problem: Problem, config: RunConfig) -> RunTrace:
    if config.mode == "blackbox":
        return run_blackbox_baseline(problem, config)
    return _run(problem, config, constrained=True, cap=config.T)


def run_with_doubling(problem: Problem, config: RunConfig) -> RunTrace:
    """Rounds of horizon 1, 2, 4, ... with data carried over, capped at ``config.T`` steps."""
    cfg = replace(config, doubling=True)
    if cfg.mode == "blackbox":
        return run_blackbox_baseline(problem, cfg)
    return _run(problem, cfg, constrained=problem.K > 0, cap=cfg.T)


def run(problem: Problem, config: RunConfig) -> RunTrace:
    """Dispatch on mode, doubling flag and whether the problem has constraints."""
    if config.doubling:
        return run_with_doubling(problem, config)
    if config.mode == "blackbox":
        return run_blackbox_baseline(problem, config)
    return (run_constrained if problem.K else run_unconstrained)(problem, config)


# --- opaque baseline ----------------------------------------------------------


def _x_only_black(graph: GreyBoxGraph) -> NodeSpec | None:
    last = graph.nodes[-1]
    want = tuple(f"x{j}" for j in range(graph.input_dim))
    if graph.m == 1 and last.is_black and last.parents == want:
        return last
    return None


def default_baseline_kernel(problem: Problem) -> Kernel:
    """Kernel of the first black-box node that reads inputs only.

    Multi-lengthscale kernels keep their smallest lengthscale, broadcast over
    all inputs; problems without such a node get a unit SE kernel scaled to
    half the narrowest domain side.
    """
    for g in problem.graphs:
        for nd in g.nodes:
            if nd.is_black and all(p.startswith("x") for p in nd.parents):
                ls = nd.kernel.lengthscales
                return Kernel(nd.kernel.family, ls if len(ls) == 1 else (min(ls),),
                              nd.kernel.output_scale, nd.kernel.nu)
    return Kernel("se", (0.5 * float(np.min(problem.upper - problem.lower)),), 1.0)


def blackbox_problem(problem: Problem, kernel: Kernel | None = None) -> Problem:
    """Each function becomes one black-box node of ``x`` with the composite as its oracle."""
    gt = problem.ground_truth
    kern = kernel or default_baseline_kernel(problem)
    parents = tuple(f"x{j}" for j in range(problem.input_dim))
    graphs = []
    for g in problem.graphs:
        existing = _x_only_black(g)
        if existing is not None:
            node = NodeSpec(0, BLACK, parents, existing.fn, existing.lipschitz,
                            existing.output_bound, existing.kernel, existing.rkhs_bound)
        else:
            if gt is None or g.name not in gt.abs_max:
                from .errors import MissingGroundTruth

                raise MissingGroundTruth("baseline needs grid maxima to set its norm bound")
            B = 1.1 * gt.abs_max[g.name] or 1e-6
            fn = Oracle.wrap(lambda S, g=g: forward_true(g, S)[:, -1], label=g.name)
            node = NodeSpec(0, BLACK, parents, fn, 1.0, B, kern, B)
        graphs.append(GreyBoxGraph(problem.input_dim, (node,), g.lower, g.upper, g.name))
    return Problem(graphs[0], tuple(graphs[1:]), gt, dict(problem.sidecar))


def run_blackbox_baseline(problem: Problem, config: RunConfig) -> RunTrace:
    """Same loop on opaque surrogates of ``f`` and each ``g_k`` (``m = 1 + K``)."""
    cfg = replace(config, mode="blackbox")
    derived = blackbox_problem(problem, config.baseline_kernel)
    return _run(derived, cfg, constrained=derived.K > 0, cap=cfg.T)
