"""Problem generators and synthetic black-box functions.

All generators are pure functions of their seed. Every problem carries a
sidecar with the generator name, seed, estimated constants and a dense-grid
ground truth, so the same instance can be rebuilt or read back from JSON.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import norm, qmc

from .errors import UnsupportedKernel
from .expressions import Expression, Oracle
from .gp import Kernel
from .graph import BLACK, WHITE, GreyBoxGraph, NodeSpec, forward_true
from .problem import Problem, compute_ground_truth, grid, ground_truth_from_values

LP_GP_KERNEL = Kernel("se", (math.sqrt(0.5),), 0.5)
_MARGIN = 1.1


def _kernel_slope(kernel: Kernel) -> float:
    """Largest |dk/dr| of the kernel profile, r in lengthscale units."""
    unit = Kernel(kernel.family, (1.0,), kernel.output_scale, kernel.nu)
    r = np.linspace(0.0, 12.0, 24001)
    k = unit(np.zeros((1, 1)), r[:, None])[0]
    return float(np.max(np.abs(np.diff(k)) / np.diff(r))) * 1.001


class RkhsTestFunction:
    """Finite kernel expansion ``sum_j w_j k(c_j, s)`` with RKHS norm ``sqrt(w^T K w)``."""

    def __init__(self, centers, weights, kernel: Kernel):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.weights = np.asarray(weights, dtype=float).ravel()
        self.kernel = kernel
        if self.centers.shape[0] != self.weights.size:
            raise ValueError("one weight per center")
        K = kernel(self.centers, self.centers)
        self.norm = float(math.sqrt(max(self.weights @ K @ self.weights, 0.0)))

    @classmethod
    def random(cls, rng: np.random.Generator, kernel: Kernel, lower, upper,
               n_centers: int = 12, B: float = 1.0) -> "RkhsTestFunction":
        """Random centers in the box, weights rescaled so the norm equals ``B``."""
        lower, upper = np.asarray(lower, float), np.asarray(upper, float)
        centers = lower + rng.random((n_centers, lower.size)) * (upper - lower)
        weights = rng.standard_normal(n_centers)
        f = cls(centers, weights, kernel)
        return cls(centers, weights * (B / f.norm), kernel)

    def __call__(self, S) -> np.ndarray:
        S = np.atleast_2d(np.asarray(S, dtype=float))
        return self.kernel(S, self.centers) @ self.weights

    def lipschitz_bound(self) -> float:
        """Global Lipschitz constant with respect to the 1-norm."""
        if self.kernel.family == "linear":
            raise UnsupportedKernel("no Lipschitz bound implemented for the linear kernel")
        return float(np.sum(np.abs(self.weights))) * _kernel_slope(self.kernel) \
            / min(self.kernel.lengthscales)

    def to_oracle(self) -> Oracle:
        return Oracle("rkhs", {
            "centers": self.centers.tolist(),
            "weights": self.weights.tolist(),
            "kernel": self.kernel.to_dict(),
        })


class RffFunction:
    """Approximate GP sample path built from random Fourier features.

    ``h(s) = sqrt(2 a / D) * sum_j w_j cos(omega_j . s + b_j)`` with
    ``omega ~ N(0, diag(1/ell^2))``, ``b ~ U(0, 2 pi)``, ``w ~ N(0, 1)``.
    Frequencies and phases come from one scrambled Sobol sequence (randomized
    quasi-Monte Carlo), which keeps the induced kernel much closer to the
    target than i.i.d. draws. Sobol points and weights are both consumed in
    order, so a larger feature count extends a smaller one.
    """

    def __init__(self, kernel: Kernel, seed: int, feature_count: int = 2048, dim: int = 2,
                 stream: int = 0):
        if kernel.family != "se":
            raise UnsupportedKernel("random Fourier sampling supports the SE kernel only")
        if feature_count < 1:
            raise ValueError("feature_count must be positive")
        ls = np.broadcast_to(np.asarray(kernel.lengthscales, float), (dim,))
        self.kernel, self.seed, self.dim, self.stream = kernel, seed, dim, stream
        self.feature_count = feature_count
        rng = np.random.default_rng([seed, stream])
        sobol = qmc.Sobol(dim + 1, scramble=True, seed=rng)
        U = sobol.random_base2(max(0, math.ceil(math.log2(feature_count))))[:feature_count]
        U = np.clip(U, 1e-12, 1.0 - 1e-12)
        self.omega = norm.ppf(U[:, :dim]) / ls
        self.phase = 2.0 * math.pi * U[:, dim]
        self.weights = rng.standard_normal(feature_count)
        self._amp = math.sqrt(2.0 * kernel.output_scale / feature_count)

    def features(self, S) -> np.ndarray:
        S = np.atleast_2d(np.asarray(S, dtype=float))
        return self._amp * np.cos(S @ self.omega.T + self.phase)

    def __call__(self, S) -> np.ndarray:
        return self.features(S) @ self.weights

    def on_grid(self, lower, upper, resolution: int) -> np.ndarray:
        """Values on :func:`greybo.problem.grid`, separably for two inputs."""
        if self.dim != 2:
            return self(grid(lower, upper, resolution))
        a = np.linspace(lower[0], upper[0], resolution)[:, None] * self.omega[:, 0] + self.phase
        c = np.linspace(lower[1], upper[1], resolution)[:, None] * self.omega[:, 1]
        w = self._amp * self.weights
        # cos(a + c) = cos a cos c - sin a sin c
        vals = (np.cos(a) * w) @ np.cos(c).T - (np.sin(a) * w) @ np.sin(c).T
        return vals.ravel()

    def covariance(self, A, B) -> np.ndarray:
        """Kernel induced by the feature map (approximates the SE kernel)."""
        return self.features(A) @ self.features(B).T

    @property
    def weight_norm(self) -> float:
        return float(np.linalg.norm(self.weights))

    def to_oracle(self) -> Oracle:
        return Oracle("rff", {
            "kernel": self.kernel.to_dict(),
            "seed": self.seed,
            "feature_count": self.feature_count,
            "dim": self.dim,
            "stream": self.stream,
        })


def sample_gp_function(kernel: Kernel, seed: int, feature_count: int = 2048,
                       dim: int | None = None, stream: int = 0) -> RffFunction:
    if dim is None:
        dim = len(kernel.lengthscales)
    return RffFunction(kernel, seed, feature_count, dim, stream)


def finite_difference_lipschitz(fn, lower, upper, resolution: int = 201,
                                values: np.ndarray | None = None) -> float:
    """Largest axis-aligned slope on a grid (a 1-norm Lipschitz estimate).

    ``values`` may carry ``fn`` already evaluated on :func:`greybo.problem.grid`.
    """
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(lower, upper)]
    shape = tuple(a.size for a in axes)
    if values is None:
        values = fn(grid(lower, upper, resolution))
    vals = np.asarray(values).reshape(shape)
    slope = 0.0
    for d, ax in enumerate(axes):
        diffs = np.abs(np.diff(vals, axis=d)) / (ax[1] - ax[0])
        slope = max(slope, float(diffs.max()))
    return slope


def _unit(rng: np.random.Generator, size: int) -> np.ndarray:
    v = rng.standard_normal(size)
    return v / np.linalg.norm(v)


def _black(i, parents, fn, kernel, B, L, C=None, tag=None) -> NodeSpec:
    return NodeSpec(i, BLACK, tuple(parents), fn, float(L), float(max(B, C or 0.0)),
                    kernel, float(B), tag)


def _white(i, parents, name, params, L, C) -> NodeSpec:
    return NodeSpec(i, WHITE, tuple(parents), Expression(name, params), float(L), float(C))


def _grid_bound(graph_nodes, n, lower, upper, resolution, name="f"):
    """Placeholder-bounded graph used only to sweep true values on a grid."""
    nodes = [NodeSpec(nd.id, nd.kind, nd.parents, nd.fn, nd.lipschitz, 1.0, nd.kernel,
                      nd.rkhs_bound, nd.tag) for nd in graph_nodes]
    g = GreyBoxGraph(n, tuple(nodes), tuple(lower), tuple(upper), name)
    return np.abs(forward_true(g, grid(lower, upper, resolution))).max(axis=0)


# --- composite example families ---------------------------------------------


def generate_composite_family(variant: str, seed: int, *, lengthscale: float = 0.5,
                              B: float = 1.0, n_centers: int = 12,
                              resolution: int | None = None,
                              stub: float | None = None) -> Problem:
    """Additive, squared-composition and hybrid-chain test problems.

    ``stub`` replaces every black-box function by that constant (for
    structural checks); bounds are still derived from the sampled functions.
    """
    rng = np.random.default_rng([seed, 33])
    kern2 = Kernel("se", (lengthscale,), 1.0)

    def rkhs(lower, upper, kernel):
        return RkhsTestFunction.random(rng, kernel, lower, upper, n_centers, B)

    def oracle(fn):
        return Oracle("constant", {"value": float(stub)}) if stub is not None else fn.to_oracle()

    if variant == "additive":
        n, lower, upper = 3, (-1.0,) * 3, (1.0,) * 3
        pairs = [("x0", "x1"), ("x1", "x2"), ("x0", "x2")]
        fns = [rkhs((-1, -1), (1, 1), kern2) for _ in pairs]
        nodes = [_black(i, p, oracle(f), kern2, B, f.lipschitz_bound())
                 for i, (p, f) in enumerate(zip(pairs, fns))]
        nodes.append(_white(3, ("z0", "z1", "z2"), "affine", {"weights": [1.0, 1.0, 1.0]}, 1.0, 1.0))
        res = resolution or 41
        top = _grid_bound(nodes, n, lower, upper, res)
        nodes[3] = _white(3, ("z0", "z1", "z2"), "affine", {"weights": [1.0, 1.0, 1.0]}, 1.0,
                          max(_MARGIN * top[3], 1e-6))
    elif variant == "squared_composition":
        n, lower, upper = 2, (-1.0,) * 2, (1.0,) * 2
        fns = [rkhs(lower, upper, kern2) for _ in range(2)]
        nodes = [_black(i, ("x0", "x1"), oracle(f), kern2, B, f.lipschitz_bound())
                 for i, f in enumerate(fns)]
        C = max(nd.output_bound for nd in nodes)
        nodes.append(_white(2, ("z0", "z1"), "quadratic", {"Q": [[1.0, 0.0], [0.0, 1.0]]},
                            2.0 * C, 1.0))
        res = resolution or 201
        top = _grid_bound(nodes, n, lower, upper, res)
        nodes[2] = _white(2, ("z0", "z1"), "quadratic", {"Q": [[1.0, 0.0], [0.0, 1.0]]},
                          2.0 * C, max(_MARGIN * top[2], 1e-6))
    elif variant == "hybrid_chain":
        n, lower, upper = 2, (-1.0,) * 2, (1.0,) * 2
        f1 = rkhs(lower, upper, kern2)
        C1 = B
        # q(u) = u^2 + 3u - 3 on [-C1, C1]
        cand = [-C1, C1] + ([-1.5] if -C1 <= -1.5 <= C1 else [])
        qvals = [u * u + 3 * u - 3 for u in cand]
        C2 = max(abs(v) for v in qvals)
        kern1 = Kernel("se", (2.0 * lengthscale,), 1.0)
        f3 = rkhs((min(qvals),), (max(qvals),), kern1)
        nodes = [
            _black(0, ("x0", "x1"), oracle(f1), kern2, B, f1.lipschitz_bound(), C1),
            _white(1, ("z0",), "polynomial", {"coeffs": [-3.0, 3.0, 1.0]}, 2.0 * C1 + 3.0, C2),
            _black(2, ("z1",), oracle(f3), kern1, B, f3.lipschitz_bound()),
        ]
        res = resolution or 201
    else:
        raise ValueError(f"unknown composite variant {variant!r}")
    graph = GreyBoxGraph(n, tuple(nodes), lower, upper, "f")
    side = {"family": "composite", "variant": variant, "seed": seed,
            "params": {"lengthscale": lengthscale, "B": B, "n_centers": n_centers,
                       "stub": stub}}
    problem = Problem(graph, sidecar=side)
    return problem.with_ground_truth(compute_ground_truth(problem, res))


# --- LP with embedded GP -----------------------------------------------------


def generate_lp_gp(seed: int, *, n_constraints: int = 2, feature_count: int = 2048,
                   resolution: int = 201, min_feasible_fraction: float = 0.01,
                   max_attempts: int = 100) -> Problem:
    """``min c1.x + c2.h(x)  s.t.  A1 x + A2 h(x) + b <= 0`` on ``[-2, 2]^2``.

    ``h`` has two independent components drawn from the GP with kernel
    ``0.5 exp(-|x - y|^2)``. Instances are rejection-sampled until at least
    ``min_feasible_fraction`` of the grid is feasible.
    """
    lower, upper = (-2.0, -2.0), (2.0, 2.0)
    pts = grid(lower, upper, resolution)
    for attempt in range(max_attempts):
        rng = np.random.default_rng([seed, attempt])
        c1, c2 = _unit(rng, 2), _unit(rng, 2)
        A1 = np.array([_unit(rng, 2) for _ in range(n_constraints)])
        A2 = np.array([_unit(rng, 2) for _ in range(n_constraints)])
        b = _unit(rng, n_constraints) if n_constraints else np.zeros(0)
        h_seed = int(rng.integers(2**31))
        hs = [RffFunction(LP_GP_KERNEL, h_seed, feature_count, 2, j) for j in range(2)]
        H = np.column_stack([h.on_grid(lower, upper, resolution) for h in hs])
        G = pts @ A1.T + H @ A2.T + b
        feasible = np.all(G <= 0, axis=1)
        if feasible.mean() >= max(min_feasible_fraction, 1e-12):
            break
    else:
        raise RuntimeError(f"no feasible LP-GP instance within {max_attempts} attempts")

    F = pts @ c1 + H @ c2
    black = []
    weight_norms = []
    for j, h in enumerate(hs):
        hmax = float(np.abs(H[:, j]).max())
        Bj = _MARGIN * hmax
        Lj = 1.2 * finite_difference_lipschitz(h, lower, upper, resolution, H[:, j])
        black.append(_black(j, ("x0", "x1"), h.to_oracle(), LP_GP_KERNEL, Bj, Lj,
                            tag=f"h{j + 1}"))
        weight_norms.append(h.weight_norm)
    parents = ("x0", "x1", "z0", "z1")

    def terminal(weights, bias, values):
        C = max(_MARGIN * float(np.abs(values).max()), 1e-6)
        return _white(2, parents, "affine", {"weights": list(map(float, weights)),
                                             "bias": float(bias)},
                      float(np.max(np.abs(weights))), C)

    objective = GreyBoxGraph(2, (*black, terminal(np.concatenate([c1, c2]), 0.0, F)),
                             lower, upper, "f")
    constraints = tuple(
        GreyBoxGraph(2, (*black, terminal(np.concatenate([A1[k], A2[k]]), b[k], G[:, k])),
                     lower, upper, f"g{k + 1}")
        for k in range(n_constraints)
    )
    side = {
        "family": "lp_gp",
        "seed": seed,
        "params": {"n_constraints": n_constraints, "feature_count": feature_count,
                   "resolution": resolution, "min_feasible_fraction": min_feasible_fraction},
        "rejections": attempt,
        "constants": {"c1": c1.tolist(), "c2": c2.tolist(), "A1": A1.tolist(),
                      "A2": A2.tolist(), "b": b.tolist(), "rff_weight_norms": weight_norms},
    }
    problem = Problem(objective, constraints, sidecar=side)
    vals = np.column_stack([F, G])
    return problem.with_ground_truth(ground_truth_from_values(problem, pts, vals, resolution))


# --- one black-box layer -----------------------------------------------------


def generate_one_layer(seed: int, K: int = 0, *, n_black: int = 2, terminal: str = "quadratic",
                       lengthscale: float = 0.5, B: float = 1.0, margin: float = 0.3,
                       resolution: int = 101) -> Problem:
    """``min F(x, phi(x))  s.t.  G_k(x, phi(x)) <= 0`` with one black-box layer.

    ``terminal="first"`` makes ``F(x, z) = z_0`` (plain black-box optimization
    of ``phi_0``). Constraint offsets are chosen so that a random anchor point
    satisfies every ``G_k <= -margin``.
    """
    rng = np.random.default_rng([seed, 1])
    n, lower, upper = 2, (-1.0, -1.0), (1.0, 1.0)
    kern = Kernel("se", (lengthscale,), 1.0)
    fns = [RkhsTestFunction.random(rng, kern, lower, upper, 12, B) for _ in range(n_black)]
    black = [_black(j, ("x0", "x1"), f.to_oracle(), kern, B, f.lipschitz_bound(), tag=f"phi{j}")
             for j, f in enumerate(fns)]
    zs = tuple(f"z{j}" for j in range(n_black))
    anchor = np.asarray(lower) + rng.random(n) * (np.asarray(upper) - np.asarray(lower))
    phi_anchor = np.array([f(anchor[None, :])[0] for f in fns])

    if terminal == "first":
        w = np.zeros(n_black)
        w[0] = 1.0
        F = _white(n_black, zs, "affine", {"weights": w.tolist()}, 1.0, B)
    elif terminal == "quadratic":
        a = np.asarray(lower) + rng.random(n) * (np.asarray(upper) - np.asarray(lower))
        c = _unit(rng, n_black)
        Q = np.zeros((n + n_black, n + n_black))
        Q[:n, :n] = 0.5 * np.eye(n)
        lin = np.concatenate([-a, c])
        d = 0.5 * float(a @ a)
        L = float(max(np.max(np.abs(lower - a)), np.max(np.abs(upper - a)), np.max(np.abs(c))))
        C = 0.5 * float(np.max((np.abs(np.asarray(lower)) + np.abs(a)) ** 2) * n) + B * n_black
        F = _white(n_black, ("x0", "x1", *zs), "quadratic",
                   {"Q": Q.tolist(), "c": lin.tolist(), "d": d}, L, C)
    else:
        raise ValueError(f"unknown terminal {terminal!r}")
    objective = GreyBoxGraph(n, (*black, F), lower, upper, "f")

    constraints = []
    for k in range(K):
        dx, dz = _unit(rng, n), _unit(rng, n_black)
        shift = -margin - float(dx @ anchor + dz @ phi_anchor)
        C = float(np.sum(np.abs(dx)) + B * np.sum(np.abs(dz)) + abs(shift)) + 1e-9
        G = _white(n_black, ("x0", "x1", *zs), "affine",
                   {"weights": np.concatenate([dx, dz]).tolist(), "bias": shift},
                   float(max(np.max(np.abs(dx)), np.max(np.abs(dz)))), C)
        constraints.append(GreyBoxGraph(n, (*black, G), lower, upper, f"g{k + 1}"))
    side = {"family": "one_layer", "seed": seed,
            "params": {"K": K, "n_black": n_black, "terminal": terminal,
                       "lengthscale": lengthscale, "B": B, "margin": margin},
            "anchor": anchor.tolist()}
    problem = Problem(objective, tuple(constraints), sidecar=side)
    return problem.with_ground_truth(compute_ground_truth(problem, resolution))


# --- feasibility-margin instances ----------------------------------------------


def generate_margin_instance(seed: int, *, margin: float = 0.3, infeasible: bool = True,
                             curvature: float = 1.0, lengthscale: float = 0.5, B: float = 1.0,
                             resolution: int = 201) -> Problem:
    """One grey-box constraint whose minimum over ``X`` is ``+margin`` or ``-margin``.

    ``g(x) = phi(x) + curvature * |x - c|^2 + shift`` with black-box ``phi``
    and a white-box bowl; ``shift`` is set from a grid sweep. The objective
    is the known bowl ``|x - a|^2``.
    """
    rng = np.random.default_rng([seed, 7])
    n, lower, upper = 2, (-1.0, -1.0), (1.0, 1.0)
    kern = Kernel("se", (lengthscale,), 1.0)
    phi = RkhsTestFunction.random(rng, kern, lower, upper, 12, B)
    a = rng.uniform(-1, 1, n)
    c = rng.uniform(-0.8, 0.8, n)
    pts = grid(lower, upper, resolution)
    base = phi(pts) + curvature * np.sum((pts - c) ** 2, axis=1)
    shift = (margin if infeasible else -margin) - float(base.min())
    gvals = base + shift
    fvals = np.sum((pts - a) ** 2, axis=1)

    f_node = _white(0, ("x0", "x1"), "quadratic",
                    {"Q": np.eye(2).tolist(), "c": (-2 * a).tolist(), "d": float(a @ a)},
                    4.0, _MARGIN * float(fvals.max()))
    Q = np.zeros((3, 3))
    Q[:2, :2] = curvature * np.eye(2)
    g_nodes = (
        _black(0, ("x0", "x1"), phi.to_oracle(), kern, B, phi.lipschitz_bound()),
        _white(1, ("x0", "x1", "z0"), "quadratic",
               {"Q": Q.tolist(), "c": [-2 * curvature * c[0], -2 * curvature * c[1], 1.0],
                "d": curvature * float(c @ c) + shift},
               max(2 * curvature * 2.0, 1.0), _MARGIN * float(np.abs(gvals).max())),
    )
    problem = Problem(
        GreyBoxGraph(n, (f_node,), lower, upper, "f"),
        (GreyBoxGraph(n, g_nodes, lower, upper, "g1"),),
        sidecar={"family": "margin", "seed": seed,
                 "params": {"margin": margin, "infeasible": infeasible,
                            "curvature": curvature, "lengthscale": lengthscale, "B": B}},
    )
    return problem.with_ground_truth(compute_ground_truth(problem, resolution))


# name used by the original interface contract
generate_section33 = generate_composite_family

GENERATORS = {
    "composite": generate_composite_family,
    "lp_gp": generate_lp_gp,
    "one_layer": generate_one_layer,
    "margin": generate_margin_instance,
}
