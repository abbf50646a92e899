import numpy as np
import pytest

from greybo.benchmarks import RkhsTestFunction, generate_margin_instance
from greybo.errors import MissingGroundTruth
from greybo.gp import Kernel, default_lambda
from greybo.graph import GreyBoxGraph
from greybo.loop import (
    Completed,
    InfeasibilityDeclared,
    RunConfig,
    blackbox_problem,
    round_ends,
    round_horizon,
    run,
    run_blackbox_baseline,
    run_constrained,
    run_unconstrained,
    run_with_doubling,
)
from greybo.metrics import compute_metrics
from greybo.problem import Problem, compute_ground_truth

from conftest import FAST_BUDGET, black, graph, white

SE = Kernel("se", (0.3,), 1.0)


def single_black(seed, dim=1, B=1.0):
    rng = np.random.default_rng([seed, 77])
    lo, hi = (-1.0,) * dim, (1.0,) * dim
    phi = RkhsTestFunction.random(rng, SE, lo, hi, 10, B)
    g = graph(dim, [black(0, [f"x{j}" for j in range(dim)], phi.to_oracle(), SE, B=B, L=1.0)])
    p = Problem(g)
    return p.with_ground_truth(compute_ground_truth(p, 401 if dim == 1 else 101))


def best_so_far(trace):
    return np.minimum.accumulate([r.regret for r in trace.records])


def test_all_white_box_needs_no_learning():
    g = graph(2, [white(0, ["x0", "x1"], "quadratic", {"Q": [[1, 0], [0, 1]], "c": [-0.6, 0.2],
                                                       "d": 0.1})])
    p = Problem(g)
    p = p.with_ground_truth(compute_ground_truth(p, 201))
    tr = run_unconstrained(p, RunConfig(T=3, seed=0))
    assert tr.keys == []
    # continuous refinement can beat the grid optimum, never by more than its resolution
    assert all(abs(r.regret) < 1e-3 for r in tr.records)
    assert np.allclose(tr.records[0].x, [0.3, -0.1], atol=1e-3)


def test_noise_free_single_black_node_improves():
    wins = 0
    for seed in range(20):
        tr = run_unconstrained(single_black(seed, 2), RunConfig(T=30, sigma=0.0, seed=seed,
                                                                budget=FAST_BUDGET))
        best = best_so_far(tr)
        wins += best[29] < best[4]
    assert wins == 20


def test_instantaneous_regret_below_discrepancy_bound():
    hits = total = 0
    for seed in range(40):
        tr = run_unconstrained(single_black(seed), RunConfig(T=15, sigma=0.01, delta=0.05,
                                                             seed=seed, budget=FAST_BUDGET))
        for r in tr.records:
            assert r.discrepancy_bound >= 0
            hits += r.regret <= r.discrepancy_bound + 1e-9
            total += 1
    assert hits / total >= 0.95


def test_white_box_constraint_infeasible_at_first_step():
    lo, hi = (1.0, 0.0), (2.0, 1.0)
    f = GreyBoxGraph(2, (white(0, ["x0", "x1"], "affine", {"weights": [1.0, 1.0]}),), lo, hi, "f")
    g = GreyBoxGraph(2, (white(0, ["x0"], "identity", {}),), lo, hi, "g1")
    tr = run_constrained(Problem(f, (g,)), RunConfig(T=10, seed=3, budget=FAST_BUDGET))
    assert tr.outcome == InfeasibilityDeclared(1)
    assert tr.records == []


def test_unconstrained_never_declares():
    p = generate_margin_instance(0, infeasible=True)
    tr = run_unconstrained(p, RunConfig(T=3, seed=0, budget=FAST_BUDGET))
    assert isinstance(tr.outcome, Completed) and tr.K == 0


def test_baseline_matches_greybox_on_single_black_node():
    diffs = []
    for seed in range(5):
        p = single_black(seed)
        assert blackbox_problem(p).objective.nodes[0].fn is p.objective.nodes[0].fn
        cfg = RunConfig(T=12, seed=seed, budget=FAST_BUDGET)
        a = best_so_far(run_unconstrained(p, cfg))
        b = best_so_far(run_blackbox_baseline(p, cfg))
        diffs.append(np.max(np.abs(a - b)))
    assert np.median(diffs) < 1e-6


def test_baseline_stays_in_domain_and_shares_schema():
    p = generate_margin_instance(1, infeasible=False)
    cfg = RunConfig(T=8, seed=1, budget=FAST_BUDGET)
    bb = run_blackbox_baseline(p, cfg)
    gb = run_constrained(p, cfg)
    assert bb.mode == "blackbox" and len(bb.keys) == 1 + p.K
    for r in bb.records:
        assert np.all(r.x >= p.lower) and np.all(r.x <= p.upper)
    assert bb.columns()[: -len(bb.keys)] == gb.columns()[: -len(gb.keys)]


def test_baseline_needs_grid_maxima():
    p = generate_margin_instance(1, infeasible=False)
    with pytest.raises(MissingGroundTruth):
        blackbox_problem(Problem(p.objective, p.constraints))


def test_round_schedule():
    assert round_ends(40) == [1, 3, 7, 15, 31]
    assert [round_horizon(t) for t in range(1, 9)] == [1, 2, 2, 4, 4, 4, 4, 8]
    cfg = RunConfig(T=20, doubling=True)
    assert cfg.lam_at(1) == default_lambda(1) == 3.0
    assert cfg.lam_at(3) == 2.0 and cfg.lam_at(7) == 1.5 and cfg.lam_at(8) == 1.25
    assert RunConfig(T=20).lam_at(13) == default_lambda(20)


def test_doubling_declares_on_infeasible_instance():
    p = generate_margin_instance(0, infeasible=True)
    tr = run_with_doubling(p, RunConfig(T=200, seed=0, sigma=0.01, budget=FAST_BUDGET))
    assert isinstance(tr.outcome, InfeasibilityDeclared)
    assert [r.lam for r in tr.records[:4]] == [3.0, 2.0, 2.0, 1.5]


def test_doubling_feasible_instance_completes():
    p = generate_margin_instance(0, infeasible=False)
    tr = run(p, RunConfig(T=20, seed=0, doubling=True, budget=FAST_BUDGET))
    assert isinstance(tr.outcome, Completed) and len(tr.records) == 20


@pytest.fixture(scope="module")
def constrained_trace():
    p = generate_margin_instance(4, infeasible=False)
    return p, run_constrained(p, RunConfig(T=12, seed=4, budget=FAST_BUDGET))


def test_trace_is_deterministic(constrained_trace):
    p, tr = constrained_trace
    again = run_constrained(p, RunConfig(T=12, seed=4, budget=FAST_BUDGET))
    assert again.to_csv() == tr.to_csv()
    other = run_constrained(p, RunConfig(T=12, seed=5, budget=FAST_BUDGET))
    assert other.to_csv() != tr.to_csv()


def test_csv_columns(constrained_trace):
    p, tr = constrained_trace
    assert tr.columns() == ["t", "x0", "x1", "f", "g1", "regret", "viol1", "cr", "disc_bound",
                            *[f"beta_{k}" for k in tr.keys]]
    text = tr.to_csv()
    lines = text.strip().split("\n")
    assert len(lines) == 13 and lines[0] == ",".join(tr.columns())
    row = lines[5].split(",")
    r = tr.records[4]
    assert int(row[0]) == 5 and float(row[3]) == r.f and float(row[1]) == r.x[0]


def test_records_are_consistent(constrained_trace):
    p, tr = constrained_trace
    for r in tr.records:
        assert r.plausible
        assert np.all(r.x >= p.lower) and np.all(r.x <= p.upper)
        f, g = p.evaluate(r.x)
        assert r.f == f and np.array_equal(r.g, g)
        assert r.regret == f - p.ground_truth.f_star
        assert np.array_equal(r.violations, np.maximum(g, 0))
        # one observation per distinct planned state of each shared function
        assert len({(k, s.tobytes()) for k, s, *_ in r.observations}) == len(r.observations)
        for k, s, y, lo, hi in r.observations:
            assert lo <= hi


def test_accumulators_monotone(constrained_trace):
    _, tr = constrained_trace
    ms = compute_metrics(tr)
    assert np.all(np.diff(ms.cumulative_positive_regret) >= 0)
    assert np.all(np.diff(ms.cumulative_violation, axis=0) >= 0)
    assert np.all(np.diff(ms.constrained_regret) <= 0)


def test_config_validation():
    for bad in [dict(T=0), dict(delta=1.0), dict(delta=0.0), dict(sigma=-1), dict(lam=0.0),
                dict(mode="random")]:
        with pytest.raises(ValueError):
            RunConfig(**bad)
    assert RunConfig(mode="blackbox_baseline").mode == "blackbox"
