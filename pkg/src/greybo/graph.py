"""Nested grey-box functions as ordered chains of elementary nodes.

Node ``i`` computes ``z_i = phi_i(s)`` where ``s`` is a declared subset of the
augmented state ``[x_0 .. x_{n-1}, z_0 .. z_{i-1}]``. Parents are written as
tokens: ``"x3"`` is input coordinate 3 and ``"z2"`` is the output of node 2
(both zero-based). The output of the last node is the function value.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    BoundViolation,
    CyclicGraph,
    DimensionMismatch,
    DomainViolation,
    EmptyDomain,
    OutputBoundViolation,
)
from .expressions import Expression, Oracle
from .gp import Kernel

WHITE = "white"
BLACK = "black"

_TOKEN = re.compile(r"^([xz])(\d+)$")
_DOMAIN_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class NodeSpec:
    id: int
    kind: str
    parents: tuple[str, ...]
    fn: Expression | Oracle
    lipschitz: float
    output_bound: float
    kernel: Kernel | None = None
    rkhs_bound: float | None = None
    # black-box nodes sharing a tag across a problem's graphs are one function
    tag: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(self.parents))
        if self.kind not in (WHITE, BLACK):
            raise ValueError(f"node kind must be 'white' or 'black', got {self.kind!r}")

    @property
    def is_black(self) -> bool:
        return self.kind == BLACK

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "kind": self.kind,
            "parents": list(self.parents),
            "L": self.lipschitz,
            "C": self.output_bound,
        }
        if self.is_black:
            d["oracle"] = self.fn.to_dict()
            d["B"] = self.rkhs_bound
            d["kernel"] = self.kernel.to_dict() if self.kernel else None
            if self.tag is not None:
                d["tag"] = self.tag
        else:
            d["expr"] = self.fn.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "NodeSpec":
        kind = d["kind"]
        if kind == BLACK:
            fn = Oracle.from_dict(d["oracle"])
            kernel = Kernel.from_dict(d["kernel"]) if d.get("kernel") else None
            B = d.get("B")
        else:
            fn = Expression.from_dict(d["expr"])
            kernel, B = None, None
        return cls(
            id=int(d["id"]),
            kind=kind,
            parents=tuple(d["parents"]),
            fn=fn,
            lipschitz=float(d["L"]),
            output_bound=float(d["C"]),
            kernel=kernel,
            rkhs_bound=None if B is None else float(B),
            tag=d.get("tag"),
        )


def parse_token(token: str, n: int) -> int:
    """Column of ``token`` in the augmented state ``[x, z]``."""
    m = _TOKEN.match(token)
    if m is None:
        raise ValueError(f"bad parent token {token!r}; expected 'x<k>' or 'z<k>'")
    k = int(m.group(2))
    if m.group(1) == "x":
        if k >= n:
            raise DimensionMismatch(f"parent {token!r} but input dimension is {n}")
        return k
    return n + k


@dataclass(frozen=True, eq=False)
class GreyBoxGraph:
    input_dim: int
    nodes: tuple[NodeSpec, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    name: str = "f"
    _cols: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        nodes = tuple(sorted(self.nodes, key=lambda nd: nd.id))
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "lower", tuple(float(v) for v in np.atleast_1d(self.lower)))
        object.__setattr__(self, "upper", tuple(float(v) for v in np.atleast_1d(self.upper)))

    @property
    def m(self) -> int:
        return len(self.nodes)

    @property
    def white_set(self) -> tuple[int, ...]:
        return tuple(nd.id for nd in self.nodes if not nd.is_black)

    @property
    def black_set(self) -> tuple[int, ...]:
        return tuple(nd.id for nd in self.nodes if nd.is_black)

    @property
    def bounds(self) -> np.ndarray:
        return np.column_stack([self.lower, self.upper])

    def columns(self, i: int) -> np.ndarray:
        """Augmented-state columns read by node ``i``."""
        cols = self._cols.get(i)
        if cols is None:
            cols = np.array([parse_token(t, self.input_dim) for t in self.nodes[i].parents],
                            dtype=int)
            self._cols[i] = cols
        return cols

    def z_parents(self, i: int) -> list[int]:
        return [c - self.input_dim for c in self.columns(i) if c >= self.input_dim]

    def contains(self, x) -> bool:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return bool(np.all((x >= lo - _DOMAIN_TOL) & (x <= hi + _DOMAIN_TOL)))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_dim": self.input_dim,
            "domain": {"lower": list(self.lower), "upper": list(self.upper)},
            "nodes": [nd.to_dict() for nd in self.nodes],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GreyBoxGraph":
        return cls(
            input_dim=int(d["input_dim"]),
            nodes=tuple(NodeSpec.from_dict(nd) for nd in d["nodes"]),
            lower=tuple(d["domain"]["lower"]),
            upper=tuple(d["domain"]["upper"]),
            name=d.get("name", "f"),
        )


def validate(graph: GreyBoxGraph) -> None:
    n = graph.input_dim
    lo, hi = np.asarray(graph.lower), np.asarray(graph.upper)
    if n < 1 or lo.size != n or hi.size != n:
        raise EmptyDomain(f"domain bounds must have length input_dim={n}")
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise EmptyDomain("domain must be a bounded hyperbox")
    if np.any(lo >= hi):
        raise EmptyDomain("every domain interval needs lower < upper")
    if graph.m == 0:
        raise ValueError("graph has no nodes")
    ids = [nd.id for nd in graph.nodes]
    if ids != list(range(graph.m)):
        raise ValueError(f"node ids must be 0..{graph.m - 1}, got {ids}")
    for nd in graph.nodes:
        for tok in nd.parents:
            col = parse_token(tok, n)
            if col >= n and col - n >= nd.id:
                raise CyclicGraph(f"node {nd.id} reads {tok}, which is not an earlier node")
        if not nd.parents:
            raise ValueError(f"node {nd.id} has no parents")
        if not nd.lipschitz > 0:
            raise BoundViolation(f"node {nd.id}: Lipschitz constant must be positive")
        if not nd.output_bound > 0:
            raise BoundViolation(f"node {nd.id}: output bound must be positive")
        if nd.is_black:
            if nd.kernel is None:
                raise ValueError(f"black-box node {nd.id} needs a kernel")
            if nd.rkhs_bound is None or not nd.rkhs_bound > 0:
                raise BoundViolation(f"black-box node {nd.id} needs a positive B")
            if nd.output_bound < nd.rkhs_bound:
                raise BoundViolation(
                    f"node {nd.id}: output bound C={nd.output_bound} < B={nd.rkhs_bound}"
                )
            if not isinstance(nd.fn, Oracle):
                raise TypeError(f"black-box node {nd.id} needs an Oracle")
        elif not isinstance(nd.fn, Expression):
            raise TypeError(f"white-box node {nd.id} needs an Expression")


def check_order(graph: GreyBoxGraph, order: Iterable[int]) -> list[int]:
    order = [int(i) for i in order]
    if sorted(order) != list(range(graph.m)):
        raise ValueError("evaluation order must be a permutation of node ids")
    seen = set()
    for i in order:
        if any(p not in seen for p in graph.z_parents(i)):
            raise CyclicGraph(f"order evaluates node {i} before one of its parents")
        seen.add(i)
    return order


def forward_true(graph: GreyBoxGraph, X: np.ndarray, order=None) -> np.ndarray:
    """Noiseless forward pass over a batch, no bound checks."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, m = graph.input_dim, graph.m
    aug = np.empty((X.shape[0], n + m))
    aug[:, :n] = X
    seq = range(m) if order is None else check_order(graph, order)
    for i in seq:
        aug[:, n + i] = graph.nodes[i].fn(aug[:, graph.columns(i)])
    return aug[:, n:]


def propagate_true(graph: GreyBoxGraph, x, order=None) -> np.ndarray:
    """True intermediate values ``z`` for one input (``(m,)``) or a batch (``(N, m)``)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x
    if X.shape[1] != graph.input_dim:
        raise DimensionMismatch(f"x has {X.shape[1]} dims, graph expects {graph.input_dim}")
    if not graph.contains(X):
        raise DomainViolation("x lies outside the input domain")
    Z = forward_true(graph, X, order)
    C = np.array([nd.output_bound for nd in graph.nodes])
    over = np.abs(Z) > C * (1 + 1e-12)
    if np.any(over):
        i = int(np.argwhere(over)[0][1])
        raise OutputBoundViolation(
            f"|z_{i}| = {np.abs(Z[:, i]).max():.6g} exceeds its bound C={C[i]:.6g}"
        )
    return Z[0] if single else Z


def evaluate_plan(graph: GreyBoxGraph, x, z_plan, noise_rng: np.random.Generator,
                  sigma: float = 0.0) -> dict[int, float]:
    """Noisy black-box observations at the planned states ``[x, z_plan[:i]]``."""
    x = np.asarray(x, dtype=float).ravel()
    z_plan = np.asarray(z_plan, dtype=float).ravel()
    if x.size != graph.input_dim or z_plan.size != graph.m:
        raise DimensionMismatch("x or z_plan has the wrong length")
    if not graph.contains(x):
        raise DomainViolation("x lies outside the input domain")
    aug = np.concatenate([x, z_plan])
    out = {}
    for i in graph.black_set:
        s = aug[graph.columns(i)][None, :]
        noise = sigma * noise_rng.standard_normal() if sigma > 0 else 0.0
        out[i] = float(graph.nodes[i].fn(s)[0]) + noise
    return out


def planned_state(graph: GreyBoxGraph, i: int, x, z) -> np.ndarray:
    aug = np.concatenate([np.asarray(x, float).ravel(), np.asarray(z, float).ravel()])
    return aug[graph.columns(i)]


def discrepancy_constants(graph: GreyBoxGraph) -> dict[int, float]:
    """Coefficients ``A_i`` of the output-discrepancy bound.

    Unrolls ``e_j <= 2 L_j * sum(e_p for z-parents p) + 2 * w_j`` where ``w_j``
    is the unit width term of black-box node ``j``; ``A_i`` is the coefficient
    of ``w_i`` in the bound on the last node.
    """
    validate(graph)
    black = list(graph.black_set)
    col = {i: k for k, i in enumerate(black)}
    coef = np.zeros((graph.m, len(black)))
    for nd in graph.nodes:
        acc = np.zeros(len(black))
        for p in graph.z_parents(nd.id):
            acc += coef[p]
        coef[nd.id] = 2.0 * nd.lipschitz * acc
        if nd.is_black:
            coef[nd.id, col[nd.id]] += 2.0
    last = coef[graph.m - 1]
    return {i: float(last[col[i]]) for i in black}


def discrepancy_bound(A: Mapping[int, float], beta: Mapping[int, float],
                      sd: Mapping[int, float]) -> float:
    return float(sum(A[i] * beta[i] * sd[i] for i in A))
