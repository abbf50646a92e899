"""Optimization problems: an objective graph plus constraint graphs.

Black-box nodes are addressed by a *key*. Untagged nodes get the key
``"<graph name>.<node id>"``; nodes carrying the same ``tag`` in several graphs
stand for one physical function and therefore share one GP model and one
interval fraction in the auxiliary problem.

Problems serialize to JSON: the graph records plus a ``sidecar`` with
generator seeds, ground truth and estimated constants.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch
from .graph import GreyBoxGraph, NodeSpec, discrepancy_constants, forward_true, validate

FORMAT = "greybo-problem/1"


@dataclass(frozen=True)
class GroundTruth:
    """Dense-grid optimum; ``x_star`` is None when no grid point is feasible."""

    x_star: tuple[float, ...] | None
    f_star: float | None
    resolution: int
    abs_max: dict = field(default_factory=dict)
    constraint_min: tuple[float, ...] = ()
    feasible_fraction: float = 1.0

    def to_dict(self) -> dict:
        return {
            "x_star": None if self.x_star is None else list(self.x_star),
            "f_star": self.f_star,
            "resolution": self.resolution,
            "abs_max": dict(self.abs_max),
            "constraint_min": list(self.constraint_min),
            "feasible_fraction": self.feasible_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(
            x_star=None if d.get("x_star") is None else tuple(d["x_star"]),
            f_star=d.get("f_star"),
            resolution=int(d["resolution"]),
            abs_max=dict(d.get("abs_max", {})),
            constraint_min=tuple(d.get("constraint_min", ())),
            feasible_fraction=float(d.get("feasible_fraction", 1.0)),
        )


@dataclass(frozen=True, eq=False)
class Problem:
    objective: GreyBoxGraph
    constraints: tuple[GreyBoxGraph, ...] = ()
    ground_truth: GroundTruth | None = None
    sidecar: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        names = [g.name for g in self.graphs]
        if len(set(names)) != len(names):
            raise ValueError(f"graph names must be unique, got {names}")
        for g in self.graphs:
            validate(g)
            if g.input_dim != self.objective.input_dim or g.lower != self.objective.lower \
                    or g.upper != self.objective.upper:
                raise DimensionMismatch(f"graph {g.name!r} has a different input domain")
        keys: dict[str, tuple[int, NodeSpec]] = {}
        slots = []
        for gi, g in enumerate(self.graphs):
            for nd in g.nodes:
                if not nd.is_black:
                    continue
                key = self.key_of(gi, nd)
                if key in keys:
                    _, first = keys[key]
                    if (len(first.parents) != len(nd.parents) or first.kernel != nd.kernel
                            or first.rkhs_bound != nd.rkhs_bound or first.fn != nd.fn):
                        raise ValueError(f"nodes sharing tag {key!r} disagree")
                else:
                    keys[key] = (gi, nd)
                slots.append((gi, nd.id, key))
        object.__setattr__(self, "_keys", keys)
        object.__setattr__(self, "_slots", tuple(slots))
        object.__setattr__(self, "_A", tuple(discrepancy_constants(g) for g in self.graphs))

    @property
    def graphs(self) -> tuple[GreyBoxGraph, ...]:
        return (self.objective, *self.constraints)

    @property
    def input_dim(self) -> int:
        return self.objective.input_dim

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.objective.lower)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.objective.upper)

    @property
    def K(self) -> int:
        return len(self.constraints)

    def key_of(self, gi: int, node: NodeSpec) -> str:
        return node.tag if node.tag is not None else f"{self.graphs[gi].name}.{node.id}"

    @property
    def keys(self) -> list[str]:
        return list(self._keys)

    def node_for(self, key: str) -> NodeSpec:
        return self._keys[key][1]

    @property
    def slots(self) -> tuple[tuple[int, int, str], ...]:
        """``(graph index, node id, key)`` for every black-box node occurrence."""
        return self._slots

    @property
    def total_nodes(self) -> int:
        """Node count across all functions, shared black-box nodes counted once."""
        white = sum(len(g.white_set) for g in self.graphs)
        return white + len(self._keys)

    def discrepancy(self, gi: int) -> dict[int, float]:
        return self._A[gi]

    def evaluate(self, x) -> tuple[float, np.ndarray]:
        """True ``f(x)`` and the vector of ``g_k(x)``."""
        X = np.atleast_2d(np.asarray(x, dtype=float))
        vals = [forward_true(g, X)[:, -1] for g in self.graphs]
        return float(vals[0][0]), np.array([v[0] for v in vals[1:]])

    def with_ground_truth(self, gt: GroundTruth) -> "Problem":
        return Problem(self.objective, self.constraints, gt, dict(self.sidecar))

    def to_dict(self) -> dict:
        side = dict(self.sidecar)
        if self.ground_truth is not None:
            side["ground_truth"] = self.ground_truth.to_dict()
        return {
            "format": FORMAT,
            "objective": self.objective.to_dict(),
            "constraints": [g.to_dict() for g in self.constraints],
            "sidecar": side,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Problem":
        side = dict(d.get("sidecar", {}))
        gt = side.pop("ground_truth", None)
        return cls(
            objective=GreyBoxGraph.from_dict(d["objective"]),
            constraints=tuple(GreyBoxGraph.from_dict(g) for g in d.get("constraints", [])),
            ground_truth=None if gt is None else GroundTruth.from_dict(gt),
            sidecar=side,
        )


def dumps(problem: Problem) -> str:
    return json.dumps(problem.to_dict(), indent=2, sort_keys=True)


def loads(text: str) -> Problem:
    return Problem.from_dict(json.loads(text))


def save(problem: Problem, path) -> None:
    Path(path).write_text(dumps(problem))


def load(path) -> Problem:
    return loads(Path(path).read_text())


def grid(lower, upper, resolution: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([a.ravel() for a in mesh])


def grid_values(problem: Problem, resolution: int, chunk: int = 20000) -> tuple[np.ndarray, np.ndarray]:
    """Grid points and the ``(N, 1 + K)`` matrix of true outputs."""
    pts = grid(problem.lower, problem.upper, resolution)
    out = np.empty((pts.shape[0], len(problem.graphs)))
    for start in range(0, pts.shape[0], chunk):
        sl = slice(start, start + chunk)
        for gi, g in enumerate(problem.graphs):
            out[sl, gi] = forward_true(g, pts[sl])[:, -1]
    return pts, out


def compute_ground_truth(problem: Problem, resolution: int = 201) -> GroundTruth:
    pts, vals = grid_values(problem, resolution)
    return ground_truth_from_values(problem, pts, vals, resolution)


def ground_truth_from_values(problem: Problem, pts: np.ndarray, vals: np.ndarray,
                             resolution: int) -> GroundTruth:
    """Ground truth from precomputed ``(N, 1 + K)`` grid outputs."""
    feasible = np.all(vals[:, 1:] <= 0.0, axis=1) if problem.K else np.ones(len(pts), bool)
    abs_max = {g.name: float(np.max(np.abs(vals[:, gi]))) for gi, g in enumerate(problem.graphs)}
    cmin = tuple(float(v) for v in vals[:, 1:].min(axis=0)) if problem.K else ()
    if not feasible.any():
        return GroundTruth(None, None, resolution, abs_max, cmin, 0.0)
    f = np.where(feasible, vals[:, 0], np.inf)
    k = int(np.argmin(f))
    return GroundTruth(tuple(float(v) for v in pts[k]), float(vals[k, 0]), resolution,
                       abs_max, cmin, float(feasible.mean()))
