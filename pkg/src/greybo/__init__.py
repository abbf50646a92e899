"""Optimistic Bayesian optimization of nested grey-box functions."""

from .acquisition import (
    AuxiliarySolution,
    NodeModel,
    SolverBudget,
    forward_plausible,
    solve_constrained,
    solve_unconstrained,
)
from .benchmarks import (
    RffFunction,
    RkhsTestFunction,
    generate_lp_gp,
    generate_margin_instance,
    generate_one_layer,
    generate_composite_family,
    sample_gp_function,
)
from .errors import *  # noqa: F401,F403
from .expressions import Expression, Oracle, register_expression, register_oracle
from .gp import ConfidenceModel, GpState, Kernel, beta, bounds, default_lambda, posterior, update
from .graph import GreyBoxGraph, NodeSpec, discrepancy_constants, propagate_true, validate
from .loop import (
    Completed,
    InfeasibilityDeclared,
    RunConfig,
    RunTrace,
    StepRecord,
    run,
    run_blackbox_baseline,
    run_constrained,
    run_unconstrained,
    run_with_doubling,
)
from .metrics import MetricSeries, aggregate, compute_metrics
from .problem import GroundTruth, Problem, compute_ground_truth, load, save

__version__ = "0.1.0"
