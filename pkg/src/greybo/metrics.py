"""Regret and violation series for finished runs, plus seed aggregation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MissingGroundTruth


@dataclass
class MetricSeries:
    t: np.ndarray
    regret: np.ndarray
    cumulative_regret: np.ndarray
    cumulative_positive_regret: np.ndarray
    # (T, K) running sums of positive constraint values
    cumulative_violation: np.ndarray
    constrained_regret: np.ndarray

    @property
    def K(self) -> int:
        return self.cumulative_violation.shape[1]

    def final(self) -> dict[str, float]:
        if self.t.size == 0:
            return {}
        out = {
            "T": int(self.t[-1]),
            "R_T": float(self.cumulative_regret[-1]),
            "positive_R_T": float(self.cumulative_positive_regret[-1]),
            "CR_T": float(self.constrained_regret[-1]),
        }
        for k in range(self.K):
            out[f"V_{k + 1}"] = float(self.cumulative_violation[-1, k])
        return out


def _as_matrix(violations, n: int) -> np.ndarray:
    v = np.asarray(violations, dtype=float)
    if v.ndim == 2 and v.shape[0] == n:
        return v
    return v.reshape(n, -1) if n else np.zeros((0, 0))


def constrained_regret(regret, violations) -> np.ndarray:
    """``CR_t = min_{tau <= t} ([regret_tau]^+ + sum_k [g_k(x_tau)]^+)``."""
    regret = np.asarray(regret, dtype=float)
    viol = _as_matrix(violations, regret.size)
    step = np.maximum(regret, 0.0) + np.maximum(viol, 0.0).sum(axis=1)
    return np.minimum.accumulate(step) if step.size else step


def series(regret, violations, t=None) -> MetricSeries:
    """Metrics from per-step regret ``f(x_t) - f*`` and ``(T, K)`` constraint values."""
    regret = np.asarray(regret, dtype=float)
    viol = np.maximum(_as_matrix(violations, regret.size), 0.0)
    if np.any(np.isnan(regret)):
        raise MissingGroundTruth("regret needs the optimal value f(x*)")
    t = np.arange(1, regret.size + 1) if t is None else np.asarray(t, dtype=int)
    return MetricSeries(
        t=t,
        regret=regret,
        cumulative_regret=np.cumsum(regret),
        cumulative_positive_regret=np.cumsum(np.maximum(regret, 0.0)),
        cumulative_violation=np.cumsum(viol, axis=0),
        constrained_regret=constrained_regret(regret, viol),
    )


def compute_metrics(trace, ground_truth=None) -> MetricSeries:
    """Metrics of a :class:`~greybo.loop.RunTrace`.

    ``ground_truth`` (a :class:`~greybo.problem.GroundTruth` or a float
    ``f*``) overrides the optimum recorded in the trace.
    """
    if ground_truth is None:
        f_star = trace.f_star
    elif isinstance(ground_truth, (int, float)):
        f_star = float(ground_truth)
    else:
        f_star = ground_truth.f_star
    if f_star is None:
        raise MissingGroundTruth("no f(x*) available for this trace")
    f = np.array([r.f for r in trace.records])
    viol = np.array([r.g for r in trace.records]).reshape(len(trace.records), trace.K)
    return series(f - f_star, viol, [r.t for r in trace.records])


def read_trace_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    data = np.array(body, dtype=float).reshape(len(body), len(header))
    return {name: data[:, j] for j, name in enumerate(header)}


def metrics_from_csv(path) -> MetricSeries:
    cols = read_trace_csv(path)
    viol = sorted((c for c in cols if c.startswith("viol")), key=lambda c: int(c[4:]))
    n = cols["t"].size
    V = np.column_stack([cols[c] for c in viol]) if viol else np.zeros((n, 0))
    return series(cols["regret"], V, cols["t"])


def aggregate(curves: list[np.ndarray], length: int | None = None) -> dict[str, np.ndarray]:
    """Median and interquartile band per step.

    Shorter curves (runs stopped by an infeasibility declaration) are padded
    with their last value; empty curves are ignored.
    """
    curves = [np.asarray(c, dtype=float) for c in curves if len(c)]
    if not curves:
        return {"median": np.zeros(0), "q25": np.zeros(0), "q75": np.zeros(0)}
    length = length or max(c.size for c in curves)
    M = np.vstack([np.pad(c[:length], (0, length - min(c.size, length)), mode="edge")
                   for c in curves])
    q25, med, q75 = np.percentile(M, [25, 50, 75], axis=0)
    return {"median": med, "q25": q25, "q75": q75}


def write_metrics_csv(ms: MetricSeries, path) -> None:
    header = ["t", "regret", "R", "positive_R", "cr"] + [f"V{k + 1}" for k in range(ms.K)]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for j in range(ms.t.size):
            w.writerow([int(ms.t[j])] + [repr(float(v)) for v in (
                ms.regret[j], ms.cumulative_regret[j], ms.cumulative_positive_regret[j],
                ms.constrained_regret[j], *ms.cumulative_violation[j])])
