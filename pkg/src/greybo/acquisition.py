"""Optimistic auxiliary problems.

Every black-box output is written as ``l(s) + theta * (u(s) - l(s))`` with
``theta`` in ``[0, 1]``, so a forward pass over ``(x, theta)`` lands in the
plausible set by construction and the auxiliary problem becomes a box-bounded
minimization. It is solved in two phases: a Sobol (or full grid) sweep, then
bounded Nelder-Mead from the best few sweep points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .errors import DimensionMismatch
from .gp import ConfidenceModel, GpState, bounds
from .graph import GreyBoxGraph
from .problem import Problem

FEASIBILITY_SLACK = 1e-9
PLAUSIBILITY_SLACK = 1e-9


@dataclass(frozen=True)
class SolverBudget:
    phase1_points: int = 2048
    refine_starts: int = 5
    refine_iters: int = 200
    infeasibility_tolerance: float = 1e-6
    # x_grid > 0 and theta_grid > 0 replace the Sobol sweep by a full product grid
    x_grid: int = 0
    theta_grid: int = 0

    def __post_init__(self):
        if self.phase1_points < 1 and not (self.x_grid and self.theta_grid):
            raise ValueError("phase1_points must be positive")
        if self.refine_starts < 0 or self.refine_iters < 0:
            raise ValueError("refinement budget must be nonnegative")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class NodeModel:
    state: GpState
    conf: ConfidenceModel

    @property
    def beta(self) -> float:
        return self.conf.beta(self.state.info_gain)

    def interval(self, S):
        return bounds(self.state, self.conf, S)


@dataclass
class AuxiliarySolution:
    x: np.ndarray
    z_bar: dict[str, np.ndarray]
    objective: float
    feasible: bool
    theta: dict[str, float] = field(default_factory=dict)
    constraint_values: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _as_problem(target) -> Problem:
    if isinstance(target, Problem):
        return target
    if isinstance(target, GreyBoxGraph):
        return Problem(target)
    raise TypeError("expected a Problem or GreyBoxGraph")


class PlausibleForward:
    """Batched forward pass over ``v = [x, theta]`` for every graph of a problem."""

    def __init__(self, problem: Problem, models: Mapping[str, NodeModel]):
        missing = [k for k in problem.keys if k not in models]
        if missing:
            raise KeyError(f"no model for black-box node(s) {missing}")
        self.problem = problem
        self.models = models
        self.n = problem.input_dim
        self.theta_col = {k: j for j, k in enumerate(problem.keys)}
        self.dim = self.n + len(self.theta_col)
        self.lo = np.concatenate([problem.lower, np.zeros(len(self.theta_col))])
        self.hi = np.concatenate([problem.upper, np.ones(len(self.theta_col))])

    def __call__(self, V) -> list[np.ndarray]:
        V = np.atleast_2d(np.asarray(V, dtype=float))
        if V.shape[1] != self.dim:
            raise DimensionMismatch(f"expected {self.dim} search coordinates, got {V.shape[1]}")
        n = self.n
        X, Th = V[:, :n], V[:, n:]
        cache = {}
        out = []
        for gi, g in enumerate(self.problem.graphs):
            aug = np.empty((V.shape[0], n + g.m))
            aug[:, :n] = X
            for nd in g.nodes:
                cols = g.columns(nd.id)
                S = aug[:, cols]
                if not nd.is_black:
                    aug[:, n + nd.id] = nd.fn(S)
                    continue
                key = self.problem.key_of(gi, nd)
                ck = (key, tuple(cols)) if np.all(cols < n) else None
                if ck is not None and ck in cache:
                    lo, hi = cache[ck]
                else:
                    lo, hi = self.models[key].interval(S)
                    if ck is not None:
                        cache[ck] = (lo, hi)
                aug[:, n + nd.id] = lo + Th[:, self.theta_col[key]] * (hi - lo)
            out.append(aug[:, n:])
        return out

    def values(self, V) -> tuple[np.ndarray, np.ndarray]:
        """Optimistic objective ``(N,)`` and constraint values ``(N, K)``."""
        Zs = self(V)
        obj = Zs[0][:, -1]
        cons = np.column_stack([Z[:, -1] for Z in Zs[1:]]) if len(Zs) > 1 \
            else np.zeros((obj.shape[0], 0))
        return obj, cons


def forward_plausible(graph: GreyBoxGraph, models: Mapping[str, NodeModel], x, theta) -> np.ndarray:
    """Plausible ``z`` for one graph at input ``x``.

    ``theta`` maps black-box keys (tag, or ``"<graph>.<id>"``) to fractions, or
    is a sequence ordered like the graph's black-box nodes.
    """
    problem = _as_problem(graph)
    fwd = PlausibleForward(problem, models)
    x = np.asarray(x, dtype=float).ravel()
    if x.size != problem.input_dim:
        raise DimensionMismatch(f"x has {x.size} dims, graph expects {problem.input_dim}")
    if isinstance(theta, Mapping):
        th = np.array([theta[k] for k in problem.keys], dtype=float)
    else:
        th = np.asarray(theta, dtype=float).ravel()
        if th.size != len(problem.keys):
            raise DimensionMismatch(f"need {len(problem.keys)} fractions, got {th.size}")
    if np.any(th < 0) or np.any(th > 1):
        raise ValueError("interval fractions must lie in [0, 1]")
    return fwd(np.concatenate([x, th])[None, :])[0][0]


def check_plausible(problem: Problem, models: Mapping[str, NodeModel], x, z_bars,
                    slack: float = PLAUSIBILITY_SLACK) -> bool:
    """Re-verify plausible-set membership of planned vectors, node by node."""
    x = np.asarray(x, dtype=float).ravel()
    for gi, g in enumerate(problem.graphs):
        z = np.asarray(z_bars[g.name], dtype=float)
        aug = np.concatenate([x, z])
        for nd in g.nodes:
            s = aug[g.columns(nd.id)]
            zi = z[nd.id]
            if nd.is_black:
                lo, hi = models[problem.key_of(gi, nd)].interval(s)
                if zi < lo - slack or zi > hi + slack:
                    return False
            elif abs(float(nd.fn(s[None, :])[0]) - zi) > slack * max(1.0, abs(zi)):
                return False
    return True


def _candidates(budget: SolverBudget, fwd: PlausibleForward, seed: int) -> np.ndarray:
    n, d = fwd.n, fwd.dim
    if budget.x_grid and budget.theta_grid:
        axes = [np.linspace(fwd.lo[j], fwd.hi[j], budget.x_grid) for j in range(n)]
        axes += [np.linspace(0.0, 1.0, budget.theta_grid) for _ in range(d - n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([a.ravel() for a in mesh])
    U = qmc.Sobol(d, scramble=True, seed=np.random.default_rng(seed)).random(budget.phase1_points)
    return fwd.lo + U * (fwd.hi - fwd.lo)


def _ranking(obj, cons, V) -> np.ndarray:
    # objective first, then aggregate constraint value (most slack first), then x
    slack = cons.sum(axis=1) if cons.shape[1] else np.zeros(obj.shape[0])
    keys = [V[:, j] for j in range(V.shape[1] - 1, -1, -1)] + [slack, obj]
    return np.lexsort(keys)


def _simplex(v0, lo, hi, step=0.05):
    d = v0.size
    S = np.tile(v0, (d + 1, 1))
    for j in range(d):
        h = step * (hi[j] - lo[j])
        S[j + 1, j] = v0[j] + h if v0[j] + h <= hi[j] else v0[j] - h
    return S


def _nelder_mead(fun, v0, fwd: PlausibleForward, iters: int) -> np.ndarray:
    res = minimize(
        fun,
        v0,
        method="Nelder-Mead",
        bounds=list(zip(fwd.lo, fwd.hi)),
        options={
            "maxiter": iters,
            "initial_simplex": _simplex(v0, fwd.lo, fwd.hi),
            "xatol": 1e-10,
            "fatol": 1e-12,
        },
    )
    return np.clip(res.x, fwd.lo, fwd.hi)


def _solution(fwd: PlausibleForward, v, feasible: bool) -> AuxiliarySolution:
    Zs = fwd(v[None, :])
    names = [g.name for g in fwd.problem.graphs]
    z_bar = {name: Z[0].copy() for name, Z in zip(names, Zs)}
    cons = np.array([Z[0, -1] for Z in Zs[1:]])
    theta = {k: float(v[fwd.n + j]) for k, j in fwd.theta_col.items()}
    return AuxiliarySolution(
        x=v[: fwd.n].copy(),
        z_bar=z_bar,
        objective=float(Zs[0][0, -1]),
        feasible=feasible,
        theta=theta,
        constraint_values=cons,
    )


def _solve(problem: Problem, models, budget: SolverBudget, seed: int,
           constrained: bool) -> AuxiliarySolution:
    if not constrained and problem.K:
        problem = Problem(problem.objective, (), problem.ground_truth, problem.sidecar)
    fwd = PlausibleForward(problem, models)
    V = _candidates(budget, fwd, seed)
    obj, cons = fwd.values(V)
    viol = cons.max(axis=1) if cons.shape[1] else np.full(obj.shape[0], -np.inf)
    ok = viol <= FEASIBILITY_SLACK

    def score(v):
        o, c = fwd.values(v[None, :])
        s = float(c.sum()) if c.size else 0.0
        feas = c.size == 0 or float(c.max()) <= FEASIBILITY_SLACK
        return feas, (float(o[0]), s, *v[: fwd.n].tolist())

    def barrier(v):
        o, c = fwd.values(v[None, :])
        if c.size and c.max() > FEASIBILITY_SLACK:
            return np.inf
        return float(o[0])

    def refine(starts):
        best_v, best_key = None, None
        for v0 in starts:
            feas, key = score(v0)
            if feas and (best_key is None or key < best_key):
                best_v, best_key = v0, key
            if budget.refine_iters == 0:
                continue
            v = _nelder_mead(barrier, v0, fwd, budget.refine_iters)
            feas, key = score(v)
            if feas and (best_key is None or key < best_key):
                best_v, best_key = v, key
        return best_v

    if ok.any():
        idx = np.flatnonzero(ok)
        order = idx[_ranking(obj[idx], cons[idx], V[idx])]
        if budget.refine_starts == 0:
            return _solution(fwd, V[order[0]], True)
        starts = [V[i] for i in order[: budget.refine_starts]]
        return _solution(fwd, refine(starts), True)

    # nothing optimistic-feasible in the sweep: minimize the worst constraint directly
    def worst(v):
        return float(fwd.values(v[None, :])[1].max())

    order = np.argsort(viol, kind="stable")
    best_v, best_w = V[order[0]], float(viol[order[0]])
    for i in order[: max(1, budget.refine_starts)]:
        if budget.refine_iters == 0:
            break
        v = _nelder_mead(worst, V[i], fwd, budget.refine_iters)
        w = worst(v)
        if w < best_w:
            best_v, best_w = v, w
    if best_w <= FEASIBILITY_SLACK:
        return _solution(fwd, refine([best_v]) if budget.refine_iters else best_v, True)
    if best_w <= budget.infeasibility_tolerance:
        return _solution(fwd, best_v, True)
    return _solution(fwd, best_v, False)


def solve_unconstrained(problem, models: Mapping[str, NodeModel], budget: SolverBudget = SolverBudget(),
                        seed: int = 0) -> AuxiliarySolution:
    """Minimize the optimistic objective over ``x`` and the plausible set."""
    return _solve(_as_problem(problem), models, budget, seed, constrained=False)


def solve_constrained(problem, models: Mapping[str, NodeModel], budget: SolverBudget = SolverBudget(),
                      seed: int = 0) -> AuxiliarySolution:
    """As :func:`solve_unconstrained` but with every optimistic constraint ``<= 0``.

    Infeasibility is reported as ``feasible=False``: neither the sweep nor the
    refinement found a point with all optimistic constraints ``<= 1e-9``, and a
    direct minimization of the worst optimistic constraint stayed above
    ``budget.infeasibility_tolerance``.
    """
    return _solve(_as_problem(problem), models, budget, seed, constrained=True)
