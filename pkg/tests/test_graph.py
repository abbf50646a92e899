import json

import numpy as np
import pytest

from greybo.benchmarks import RkhsTestFunction, generate_one_layer, generate_composite_family
from greybo.errors import (
    BoundViolation,
    CyclicGraph,
    DimensionMismatch,
    DomainViolation,
    EmptyDomain,
    OutputBoundViolation,
)
from greybo.expressions import Expression, Oracle
from greybo.gp import Kernel
from greybo.graph import (
    GreyBoxGraph,
    check_order,
    discrepancy_constants,
    evaluate_plan,
    forward_true,
    propagate_true,
    validate,
)
from greybo.problem import grid

from conftest import black, const, graph, white


def test_forward_reference_is_cyclic():
    g = graph(1, [white(0, ["z1"], "identity", {}), white(1, ["x0"], "identity", {})])
    with pytest.raises(CyclicGraph):
        validate(g)


def test_self_reference_is_cyclic():
    g = graph(1, [white(0, ["z0"], "identity", {})])
    with pytest.raises(CyclicGraph):
        validate(g)


def test_single_white_node_is_valid():
    g = graph(1, [white(0, ["x0"], "identity", {}, C=1.0)])
    validate(g)
    assert propagate_true(g, [0.5])[-1] == 0.5


def test_output_bound_below_norm_bound():
    g = graph(1, [black(0, ["x0"], const(0.0), B=2.0, C=1.0)])
    with pytest.raises(BoundViolation):
        validate(g)


@pytest.mark.parametrize("lo,hi", [(1.0, 1.0), (2.0, 1.0), (-np.inf, 1.0)])
def test_degenerate_domain(lo, hi):
    g = GreyBoxGraph(1, (white(0, ["x0"], "identity", {}),), (lo,), (hi,))
    with pytest.raises(EmptyDomain):
        validate(g)


def test_nonpositive_lipschitz_rejected():
    g = graph(1, [white(0, ["x0"], "identity", {}, L=0.0)])
    with pytest.raises(BoundViolation):
        validate(g)


def test_parent_beyond_input_dim():
    g = graph(1, [white(0, ["x3"], "identity", {})])
    with pytest.raises(DimensionMismatch):
        validate(g)


def test_nested_example_with_zero_stub():
    # (phi(x0, x1) - x2)^2 + x2^2 with phi == 0
    Q = [[1.0, -1.0], [-1.0, 2.0]]
    g = graph(3, [black(0, ["x0", "x1"], const(0.0)), white(1, ["z0", "x2"], "quadratic", {"Q": Q})])
    assert propagate_true(g, [0.0, 0.0, 1.0])[-1] == pytest.approx(2.0, abs=1e-15)


def test_hybrid_chain_with_stubs():
    g = graph(2, [
        black(0, ["x0", "x1"], const(1.0)),
        white(1, ["z0"], "polynomial", {"coeffs": [-3.0, 3.0, 1.0]}, L=5.0, C=5.0),
        black(2, ["z1"], Oracle("expression", {"name": "identity"}), C=5.0),
    ])
    assert propagate_true(g, [0.3, -0.2])[-1] == pytest.approx(1.0, abs=1e-15)


def test_random_graph_matches_direct_nesting(rng):
    kern = Kernel("se", (0.7,), 1.0)
    f1 = RkhsTestFunction.random(rng, kern, (-1, -1), (1, 1), 8, 1.0)
    f3 = RkhsTestFunction.random(rng, kern, (-3,), (3,), 8, 1.0)
    w = rng.normal(size=2)
    g = graph(2, [
        black(0, ["x0", "x1"], f1.to_oracle(), kern),
        white(1, ["x1", "z0"], "affine", {"weights": w.tolist(), "bias": 0.25}),
        black(2, ["z1"], f3.to_oracle(), kern),
        white(3, ["z0", "z2", "x0"], "product", {"scale": 1.5}),
    ])
    X = rng.uniform(-1, 1, (200, 2))
    for x in X:
        a = f1(x[None, :])[0]
        b = w[0] * x[1] + w[1] * a + 0.25
        c = f3(np.array([[b]]))[0]
        direct = 1.5 * a * c * x[0]
        assert abs(propagate_true(g, x)[-1] - direct) <= 1e-12


def test_order_independence(rng):
    g = graph(2, [
        white(0, ["x0"], "power", {"exponent": 2}),
        white(1, ["x1"], "affine", {"weights": [2.0]}),
        white(2, ["z0", "z1"], "product", {}),
        white(3, ["z1", "z2"], "affine", {"weights": [1.0, -1.0]}),
    ])
    X = rng.uniform(-1, 1, (50, 2))
    ref = forward_true(g, X)
    assert np.array_equal(forward_true(g, X, order=[1, 0, 2, 3]), ref)
    assert np.array_equal(forward_true(g, X, order=[0, 1, 2, 3]), ref)
    with pytest.raises(CyclicGraph):
        check_order(g, [2, 0, 1, 3])


def test_propagate_checks_domain_and_bounds():
    g = graph(1, [white(0, ["x0"], "affine", {"weights": [3.0]}, C=1.0)])
    with pytest.raises(DomainViolation):
        propagate_true(g, [1.5])
    with pytest.raises(OutputBoundViolation):
        propagate_true(g, [0.9])
    with pytest.raises(DimensionMismatch):
        propagate_true(g, [0.1, 0.2])


def _plan_graph():
    kern = Kernel("se", (0.5,), 1.0)
    f = RkhsTestFunction(np.array([[0.1, 0.2], [-0.3, 0.5]]), np.array([0.4, -0.2]), kern)
    return graph(2, [black(0, ["x0", "x1"], f.to_oracle(), kern), white(1, ["z0"], "identity", {})]), f


def test_evaluate_plan_without_noise():
    g, f = _plan_graph()
    obs = evaluate_plan(g, [0.2, 0.1], [0.0, 0.0], np.random.default_rng(0), sigma=0.0)
    assert obs == {0: f(np.array([[0.2, 0.1]]))[0]}


def test_evaluate_plan_is_deterministic():
    g, _ = _plan_graph()
    a = evaluate_plan(g, [0.2, 0.1], [0.0, 0.0], np.random.default_rng(5), sigma=0.3)
    b = evaluate_plan(g, [0.2, 0.1], [0.0, 0.0], np.random.default_rng(5), sigma=0.3)
    assert a == b


def test_evaluate_plan_noise_mean():
    g, f = _plan_graph()
    rng = np.random.default_rng(11)
    vals = [evaluate_plan(g, [0.2, 0.1], [0.0, 0.0], rng, sigma=0.1)[0] for _ in range(10000)]
    truth = f(np.array([[0.2, 0.1]]))[0]
    assert abs(np.mean(vals) - truth) <= 3 * 0.1 / np.sqrt(10000)


def test_evaluate_plan_outside_domain():
    g, _ = _plan_graph()
    with pytest.raises(DomainViolation):
        evaluate_plan(g, [2.0, 0.0], [0.0, 0.0], np.random.default_rng(0))


def test_discrepancy_one_layer():
    g = graph(2, [black(0, ["x0", "x1"], const(0.0))])
    assert discrepancy_constants(g) == {0: 2.0}


def test_discrepancy_black_then_white():
    g = graph(1, [black(0, ["x0"], const(0.0)), white(1, ["z0"], "identity", {}, L=1.0)])
    assert discrepancy_constants(g) == {0: 4.0}


def _path_sum_constants(g):
    """Brute force: A_i = 2 * sum over directed paths i -> last of prod(2 L_head)."""
    last = g.m - 1
    children = {i: [j for j in range(g.m) if i in g.z_parents(j)] for i in range(g.m)}

    def paths(i):
        if i == last:
            return 1.0
        return sum(2.0 * g.nodes[j].lipschitz * paths(j) for j in children[i])

    return {i: 2.0 * paths(i) for i in g.black_set}


def test_discrepancy_matches_path_enumeration(rng):
    for _ in range(20):
        nodes = []
        for i in range(5):
            cands = ["x0", "x1"] + [f"z{j}" for j in range(i)]
            k = rng.integers(1, len(cands) + 1)
            parents = list(rng.choice(cands, size=k, replace=False))
            if i == 4 and not any(p.startswith("z") for p in parents):
                parents.append("z3")
            L = float(rng.uniform(0.2, 3.0))
            if rng.random() < 0.5:
                nodes.append(black(i, parents, const(0.0), L=L))
            else:
                nodes.append(white(i, parents, "affine", {"weights": [1.0] * len(parents)}, L=L))
        g = graph(2, nodes)
        ours = discrepancy_constants(g)
        ref = _path_sum_constants(g)
        assert ours.keys() == ref.keys()
        for i in ours:
            assert ours[i] == pytest.approx(ref[i], rel=1e-12)


def test_graph_json_roundtrip():
    p = generate_composite_family("hybrid_chain", 3)
    g = p.objective
    text = json.dumps(g.to_dict())
    back = GreyBoxGraph.from_dict(json.loads(text))
    assert back.to_dict() == g.to_dict()
    X = grid(g.lower, g.upper, 11)
    assert np.array_equal(forward_true(back, X), forward_true(g, X))


@pytest.mark.parametrize("make", [
    lambda: generate_composite_family("additive", 0, resolution=15),
    lambda: generate_composite_family("squared_composition", 1),
    lambda: generate_composite_family("hybrid_chain", 2),
    lambda: generate_one_layer(0, 2),
])
def test_generated_bounds_hold_on_grid(make):
    p = make()
    for g in p.graphs:
        propagate_true(g, grid(g.lower, g.upper, 31 if g.input_dim == 2 else 11))
