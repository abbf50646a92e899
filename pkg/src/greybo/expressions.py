"""Named white-box expressions and black-box oracle handles.

Both kinds are vectorized: they take an ``(N, k)`` array holding the node's
parent values row by row and return an ``(N,)`` array. Everything built from
the registries round-trips through ``to_dict`` / ``from_dict`` so graphs can
be written to and read back from text configs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

_EXPRESSIONS: dict[str, Callable[..., Callable[[np.ndarray], np.ndarray]]] = {}
_ORACLES: dict[str, Callable[..., Callable[[np.ndarray], np.ndarray]]] = {}


def register_expression(name: str):
    """Decorator adding a white-box expression factory ``factory(**params)``."""

    def deco(factory):
        _EXPRESSIONS[name] = factory
        return factory

    return deco


def register_oracle(name: str):
    def deco(factory):
        _ORACLES[name] = factory
        return factory

    return deco


def expression_names() -> list[str]:
    return sorted(_EXPRESSIONS)


@dataclass(frozen=True, eq=False)
class Expression:
    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in _EXPRESSIONS:
            raise KeyError(f"unknown white-box expression {self.name!r}")
        object.__setattr__(self, "_fn", _EXPRESSIONS[self.name](**self.params))

    def __call__(self, S) -> np.ndarray:
        S = np.atleast_2d(np.asarray(S, dtype=float))
        return np.asarray(self._fn(S), dtype=float).reshape(S.shape[0])

    def to_dict(self) -> dict:
        return {"name": self.name, "params": _plain(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "Expression":
        return cls(d["name"], dict(d.get("params", {})))

    def __eq__(self, other):
        return isinstance(other, Expression) and self.to_dict() == other.to_dict()

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Oracle:
    """Handle on an expensive function; ``type`` selects a registered factory.

    The special type ``"callable"`` wraps an arbitrary Python function. It is
    usable at runtime but cannot be serialized.
    """

    type: str
    params: dict = field(default_factory=dict)
    fn: Callable | None = None

    def __post_init__(self):
        if self.type == "callable":
            if self.fn is None:
                raise ValueError("callable oracle needs fn")
            impl = self.fn
        else:
            if self.type not in _ORACLES:
                raise KeyError(f"unknown oracle type {self.type!r}")
            impl = _ORACLES[self.type](**self.params)
        object.__setattr__(self, "_impl", impl)

    def __call__(self, S) -> np.ndarray:
        S = np.atleast_2d(np.asarray(S, dtype=float))
        return np.asarray(self._impl(S), dtype=float).reshape(S.shape[0])

    @property
    def impl(self):
        return self._impl

    def to_dict(self) -> dict:
        if self.type == "callable":
            raise TypeError("callable oracles are runtime-only and cannot be serialized")
        return {"type": self.type, "params": _plain(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "Oracle":
        return cls(d["type"], dict(d.get("params", {})))

    @classmethod
    def wrap(cls, fn: Callable, label: str = "") -> "Oracle":
        return cls("callable", {"label": label}, fn)

    def __eq__(self, other):
        if not isinstance(other, Oracle):
            return False
        if self.type == "callable" or other.type == "callable":
            return self is other
        return self.to_dict() == other.to_dict()

    __hash__ = None


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# --- builtin white-box forms -------------------------------------------------


@register_expression("identity")
def _identity():
    return lambda S: S[:, 0]


@register_expression("affine")
def _affine(weights, bias=0.0):
    w = np.asarray(weights, dtype=float)
    return lambda S: S @ w + bias


@register_expression("quadratic")
def _quadratic(Q, c=None, d=0.0):
    """``s^T Q s + c^T s + d``."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    c = np.zeros(Q.shape[0]) if c is None else np.asarray(c, dtype=float)
    return lambda S: np.einsum("ni,ij,nj->n", S, Q, S) + S @ c + d


@register_expression("polynomial")
def _polynomial(coeffs):
    """Univariate polynomial, coefficients from the constant term upward."""
    coeffs = np.asarray(coeffs, dtype=float)
    return lambda S: np.polynomial.polynomial.polyval(S[:, 0], coeffs)


@register_expression("product")
def _product(scale=1.0):
    return lambda S: scale * np.prod(S, axis=1)


@register_expression("power")
def _power(exponent, scale=1.0):
    return lambda S: scale * np.sum(np.power(S, exponent), axis=1)


# --- builtin oracle types ----------------------------------------------------


@register_oracle("constant")
def _constant(value=0.0):
    return lambda S: np.full(S.shape[0], float(value))


@register_oracle("expression")
def _expression_oracle(name, params=None):
    return Expression(name, dict(params or {}))


@register_oracle("rkhs")
def _rkhs_oracle(centers, weights, kernel):
    from .benchmarks import RkhsTestFunction
    from .gp import Kernel

    return RkhsTestFunction(np.asarray(centers, float), np.asarray(weights, float),
                            Kernel.from_dict(kernel))


@register_oracle("rff")
def _rff_oracle(kernel, seed, feature_count, dim, stream=0):
    from .benchmarks import RffFunction
    from .gp import Kernel

    return RffFunction(Kernel.from_dict(kernel), int(seed), int(feature_count), int(dim),
                       int(stream))
