import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from greybo.acquisition import NodeModel, SolverBudget
from greybo.expressions import Expression, Oracle
from greybo.gp import ConfidenceModel, GpState, Kernel
from greybo.graph import BLACK, WHITE, GreyBoxGraph, NodeSpec

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# small budget for statistical runs; the library default is much larger
FAST_BUDGET = SolverBudget(phase1_points=1024, refine_starts=3, refine_iters=100)


def white(i, parents, name, params, L=1.0, C=10.0):
    return NodeSpec(i, WHITE, tuple(parents), Expression(name, params), L, C)


def black(i, parents, oracle, kernel=None, B=1.0, L=1.0, C=None, tag=None):
    kernel = kernel or Kernel("se", (0.5,), 1.0)
    return NodeSpec(i, BLACK, tuple(parents), oracle, L, C if C is not None else B, kernel, B, tag)


def const(value):
    return Oracle("constant", {"value": value})


def box(n, lo=-1.0, hi=1.0):
    return (lo,) * n, (hi,) * n


def graph(n, nodes, lo=-1.0, hi=1.0, name="f"):
    lower, upper = box(n, lo, hi)
    return GreyBoxGraph(n, tuple(nodes), lower, upper, name)


def empty_models(problem, sigma=0.0, delta=0.1):
    models = {}
    for key in problem.keys:
        nd = problem.node_for(key)
        models[key] = NodeModel(GpState.empty(nd.kernel, len(nd.parents), 1.5),
                                ConfidenceModel(nd.rkhs_bound, sigma, problem.total_nodes, delta))
    return models


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
