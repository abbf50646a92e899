"""Gaussian-process surrogates for single black-box nodes.

A :class:`GpState` is an immutable value holding the data gathered for one
black-box node together with a Cholesky factorization of ``K + lam * I``.
``update`` returns a fresh state; nothing is mutated in place, so posterior
queries against one state can be issued from several threads.

Confidence intervals follow the clipped form

    l(s) = max(mu(s) - beta * sd(s), -B),   u(s) = min(mu(s) + beta * sd(s), B)

with ``beta = B + sigma * sqrt(2 * (gamma + 1 + ln(m / delta)))`` where
``gamma`` is the information gain of the points sampled so far.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import DimensionMismatch, NumericalBreakdown, UnsupportedKernel

NEGATIVE_VARIANCE_TOL = 1e-10
DEFAULT_LAMBDA = 1e-2

_MATERN_NU = (0.5, 1.5, 2.5)


@dataclass(frozen=True)
class Kernel:
    """Stationary (SE, Matern) or ball-projected linear kernel.

    ``output_scale`` is capped at one so that ``k(s, s) <= 1`` everywhere. A
    single lengthscale is broadcast over every input dimension.

    The linear family is ``output_scale * <p(a / ell), p(b / ell)>`` where ``p``
    projects onto the unit ball; inside the ball of radius ``ell`` it is the
    plain linear kernel, and the projection keeps ``k(s, s) <= output_scale``
    for unbounded inputs.
    """

    family: str = "se"
    lengthscales: tuple[float, ...] = (1.0,)
    output_scale: float = 1.0
    nu: float = 2.5

    def __post_init__(self):
        family = self.family.lower()
        if family not in ("se", "matern", "linear"):
            raise UnsupportedKernel(f"unknown kernel family {self.family!r}")
        object.__setattr__(self, "family", family)
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        if not ls or min(ls) <= 0:
            raise ValueError("lengthscales must be positive")
        object.__setattr__(self, "lengthscales", ls)
        if not 0 < self.output_scale <= 1:
            raise ValueError("output_scale must lie in (0, 1] so that k(s, s) <= 1")
        if family == "matern" and float(self.nu) not in _MATERN_NU:
            raise UnsupportedKernel(f"Matern nu must be one of {_MATERN_NU}")

    def _scale(self, a: np.ndarray) -> np.ndarray:
        ls = np.asarray(self.lengthscales)
        if ls.size != 1 and ls.size != a.shape[1]:
            raise DimensionMismatch(
                f"kernel has {ls.size} lengthscales, input has {a.shape[1]} dims"
            )
        return a / ls

    def __call__(self, a, b) -> np.ndarray:
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        if a.shape[1] != b.shape[1]:
            raise DimensionMismatch(f"{a.shape[1]} vs {b.shape[1]} input dims")
        return self.scaled(self._scale(a), self._scale(b))

    def scaled(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Gram matrix of inputs already divided by the lengthscales."""
        if self.family == "linear":
            a = a / np.maximum(1.0, np.linalg.norm(a, axis=1, keepdims=True))
            b = b / np.maximum(1.0, np.linalg.norm(b, axis=1, keepdims=True))
            return self.output_scale * (a @ b.T)
        sq = np.einsum("ij,ij->i", a, a)[:, None] + np.einsum("ij,ij->i", b, b)[None, :] \
            - 2.0 * (a @ b.T)
        np.maximum(sq, 0.0, out=sq)
        if self.family == "se":
            return self.output_scale * np.exp(-0.5 * sq)
        r = np.sqrt(sq)
        if self.nu == 0.5:
            k = np.exp(-r)
        elif self.nu == 1.5:
            c = math.sqrt(3.0) * r
            k = (1.0 + c) * np.exp(-c)
        else:
            c = math.sqrt(5.0) * r
            k = (1.0 + c + c * c / 3.0) * np.exp(-c)
        return self.output_scale * k

    def diag(self, a) -> np.ndarray:
        a = np.atleast_2d(np.asarray(a, dtype=float))
        if self.family == "linear":
            s = self._scale(a)
            n2 = np.sum(s * s, axis=1)
            return self.output_scale * np.minimum(n2, 1.0)
        return np.full(a.shape[0], self.output_scale)

    def to_dict(self) -> dict:
        d = {
            "family": self.family,
            "lengthscales": list(self.lengthscales),
            "output_scale": self.output_scale,
        }
        if self.family == "matern":
            d["nu"] = self.nu
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Kernel":
        return cls(
            family=d.get("family", "se"),
            lengthscales=tuple(d.get("lengthscales", (1.0,))),
            output_scale=float(d.get("output_scale", 1.0)),
            nu=float(d.get("nu", 2.5)),
        )


def default_lambda(T: int | None) -> float:
    """``1 + 2/T`` for a known horizon, a small fixed regularizer otherwise."""
    if T is None:
        return DEFAULT_LAMBDA
    if T < 1:
        raise ValueError("horizon T must be >= 1")
    return 1.0 + 2.0 / T


@dataclass(frozen=True, eq=False)
class GpState:
    kernel: Kernel
    dim: int
    lam: float = DEFAULT_LAMBDA
    inputs: np.ndarray = field(default=None)
    targets: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        X = np.zeros((0, self.dim)) if self.inputs is None else np.asarray(self.inputs, float)
        y = np.zeros(0) if self.targets is None else np.asarray(self.targets, float).ravel()
        X = X.reshape(-1, self.dim) if X.size else np.zeros((0, self.dim))
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatch("inputs and targets differ in length")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", y)
        t = X.shape[0]
        if t == 0:
            object.__setattr__(self, "_chol", None)
            object.__setattr__(self, "_alpha", np.zeros(0))
            object.__setattr__(self, "info_gain", 0.0)
            return
        K = self.kernel(X, X)
        A = K + self.lam * np.eye(t)
        try:
            L = np.linalg.cholesky(A)
        except np.linalg.LinAlgError as exc:
            raise NumericalBreakdown("K + lambda*I is not positive definite") from exc
        alpha = cho_solve((L, True), y)
        logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
        object.__setattr__(self, "_chol", L)
        object.__setattr__(self, "_alpha", alpha)
        object.__setattr__(self, "_chol_inv",
                           solve_triangular(L, np.eye(t), lower=True, check_finite=False))
        object.__setattr__(self, "_scaled", self.kernel._scale(X))
        object.__setattr__(self, "info_gain", 0.5 * (logdet - t * math.log(self.lam)))

    @classmethod
    def empty(cls, kernel: Kernel, dim: int, lam: float = DEFAULT_LAMBDA) -> "GpState":
        return cls(kernel=kernel, dim=dim, lam=lam)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def posterior(self, s):
        return posterior(self, s)

    def update(self, s_new, y_new) -> "GpState":
        return update(self, s_new, y_new)

    def with_lambda(self, lam: float) -> "GpState":
        """Same data, new regularizer (factorization and gain recomputed)."""
        return GpState(self.kernel, self.dim, lam, self.inputs, self.targets)

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel.to_dict(),
            "dim": self.dim,
            "lambda": self.lam,
            "inputs": self.inputs.tolist(),
            "targets": self.targets.tolist(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "GpState":
        dim = int(d["dim"])
        return cls(
            kernel=Kernel.from_dict(d["kernel"]),
            dim=dim,
            lam=float(d["lambda"]),
            inputs=np.asarray(d["inputs"], dtype=float).reshape(-1, dim),
            targets=np.asarray(d["targets"], dtype=float),
        )

    @classmethod
    def loads(cls, text: str) -> "GpState":
        return cls.from_dict(json.loads(text))


def _as_queries(state: GpState, s) -> tuple[np.ndarray, bool]:
    # 1-D input is one point; 2-D input is a batch of rows
    arr = np.asarray(s, dtype=float)
    single = arr.ndim <= 1
    arr = arr.reshape(1, -1) if single else arr
    if arr.ndim != 2 or arr.shape[1] != state.dim:
        raise DimensionMismatch(f"query has {arr.shape[1]} dims, node expects {state.dim}")
    return arr, single


def posterior(state: GpState, s):
    """Posterior mean and variance at one query (scalars) or a batch (arrays)."""
    S, single = _as_queries(state, s)
    prior = state.kernel.diag(S)
    if state.n == 0:
        mean, var = np.zeros(S.shape[0]), prior
    else:
        Ks = state.kernel.scaled(state._scaled, state.kernel._scale(S))
        mean = Ks.T @ state._alpha
        v = state._chol_inv @ Ks
        var = prior - np.einsum("ij,ij->j", v, v)
        if np.any(var < -NEGATIVE_VARIANCE_TOL):
            raise NumericalBreakdown(f"negative posterior variance {var.min():.3e}")
        var = np.maximum(var, 0.0)
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def update(state: GpState, s_new, y_new) -> GpState:
    s = np.asarray(s_new, dtype=float).reshape(-1)
    if s.size != state.dim:
        raise DimensionMismatch(f"new input has {s.size} dims, node expects {state.dim}")
    X = np.vstack([state.inputs, s[None, :]])
    y = np.append(state.targets, float(y_new))
    return GpState(state.kernel, state.dim, state.lam, X, y)


@dataclass(frozen=True)
class ConfidenceModel:
    B: float
    sigma: float
    m: int
    delta: float
    beta_scale: float = 1.0

    def __post_init__(self):
        if self.B <= 0:
            raise ValueError("RKHS norm bound B must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.m < 1:
            raise ValueError("node count m must be >= 1")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.beta_scale <= 0:
            raise ValueError("beta_scale must be positive")

    def beta(self, info_gain_prev: float) -> float:
        return beta(self, info_gain_prev)


def beta(conf: ConfidenceModel, info_gain_prev: float) -> float:
    if info_gain_prev < 0:
        raise ValueError("information gain must be nonnegative")
    width = conf.sigma * math.sqrt(
        2.0 * (info_gain_prev + 1.0 + math.log(conf.m / conf.delta))
    )
    return conf.beta_scale * (conf.B + width)


def bounds(state: GpState, conf: ConfidenceModel, s):
    """Clipped confidence interval ``(l, u)`` at ``s``.

    Both ends are clamped into ``[-B, B]``; when the posterior mean has drifted
    outside that band the interval collapses onto the nearer edge, so
    ``l <= u`` always holds.
    """
    mean, var = posterior(state, s)
    b = conf.beta(state.info_gain)
    sd = np.sqrt(var) if np.ndim(var) else math.sqrt(var)
    if np.ndim(mean) == 0:
        return (min(max(mean - b * sd, -conf.B), conf.B),
                min(max(mean + b * sd, -conf.B), conf.B))
    lo = np.minimum(np.maximum(mean - b * sd, -conf.B), conf.B)
    hi = np.minimum(np.maximum(mean + b * sd, -conf.B), conf.B)
    return lo, hi
