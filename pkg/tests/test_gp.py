import math

import numpy as np
import pytest

from greybo.benchmarks import RkhsTestFunction
from greybo.errors import DimensionMismatch, NumericalBreakdown, UnsupportedKernel
from greybo.gp import (
    ConfidenceModel,
    GpState,
    Kernel,
    beta,
    bounds,
    default_lambda,
    posterior,
    update,
)


def dense_oracle(kernel, X, y, lam, S):
    """Posterior from an explicit matrix inverse, independent of the Cholesky path."""
    K = kernel(X, X)
    inv = np.linalg.inv(K + lam * np.eye(len(X)))
    Ks = kernel(X, S)
    mean = Ks.T @ inv @ y
    if kernel.family == "linear":
        z = S / np.asarray(kernel.lengthscales)
        prior = kernel.output_scale * np.minimum(np.sum(z * z, axis=1), 1.0)
    else:
        prior = np.full(len(S), kernel.output_scale)
    var = prior - np.einsum("is,ij,js->s", Ks, inv, Ks)
    return mean, var


def logdet_oracle(kernel, X, lam):
    K = kernel(X, X)
    sign, ld = np.linalg.slogdet(np.eye(len(X)) + K / lam)
    assert sign > 0
    return 0.5 * ld


def fit(kernel, X, y, lam):
    st = GpState.empty(kernel, X.shape[1], lam)
    for s, v in zip(X, y):
        st = update(st, s, v)
    return st


def test_prior_posterior():
    k = Kernel("se", (0.3,), 0.7)
    st = GpState.empty(k, 2)
    assert posterior(st, [0.1, 0.2]) == (0.0, 0.7)


def test_single_point_closed_form():
    k = Kernel("se", (0.5,), 0.8)
    st = update(GpState.empty(k, 1, 1.5), [0.3], 2.0)
    mean, var = posterior(st, [0.3])
    assert mean == pytest.approx(0.8 * 2.0 / (0.8 + 1.5), abs=1e-15)
    assert var == pytest.approx(0.8 - 0.8 * 0.8 / 2.3, abs=1e-15)


@pytest.mark.parametrize("kernel", [
    Kernel("se", (0.4, 0.9), 1.0),
    Kernel("matern", (0.6,), 0.5, nu=1.5),
    Kernel("matern", (0.6,), 1.0, nu=2.5),
    Kernel("matern", (0.6,), 1.0, nu=0.5),
    Kernel("linear", (2.0,), 1.0),
])
def test_batch_matches_dense_inverse(kernel, rng):
    X = rng.uniform(-1, 1, (20, 2))
    y = rng.normal(size=20)
    S = rng.uniform(-1, 1, (50, 2))
    st = fit(kernel, X, y, 0.3)
    mean, var = posterior(st, S)
    m_ref, v_ref = dense_oracle(kernel, X, y, 0.3, S)
    assert np.max(np.abs(mean - m_ref)) <= 1e-8
    assert np.max(np.abs(var - np.maximum(v_ref, 0))) <= 1e-8


def test_update_pulls_mean_toward_observation():
    k = Kernel("se", (0.5,), 1.0)
    st = update(GpState.empty(k, 1, 1e-3), [0.2], 1.7)
    assert abs(posterior(st, [0.2])[0] - 1.7) < abs(0.0 - 1.7)


def test_variance_non_increasing_after_update(rng):
    k = Kernel("se", (0.5,), 1.0)
    for _ in range(30):
        X = rng.uniform(-1, 1, (12, 3))
        y = rng.normal(size=12)
        q = rng.uniform(-1, 1, (5, 3))
        st = GpState.empty(k, 3, 1.1)
        prev = posterior(st, q)[1]
        for j, (s, v) in enumerate(zip(X, y)):
            st = update(st, s, v)
            cur = posterior(st, q)[1]
            assert np.all(cur <= prev + 1e-12)
            ref = dense_oracle(k, X[: j + 1], y[: j + 1], 1.1, q)[1]
            assert np.max(np.abs(cur - ref)) <= 1e-8
            prev = cur


def test_info_gain_matches_logdet(rng):
    k = Kernel("matern", (0.7,), 0.9, nu=2.5)
    X = rng.uniform(-2, 2, (25, 4))
    st = GpState.empty(k, 4, 1.08)
    assert st.info_gain == 0.0
    gains = []
    for t, s in enumerate(X, 1):
        st = update(st, s, 0.0)
        assert st.info_gain == pytest.approx(logdet_oracle(k, X[:t], 1.08), abs=1e-8)
        gains.append(st.info_gain)
    assert np.all(np.diff(gains) >= 0)


def test_beta_zero_noise():
    for gamma in (0.0, 1.0, 50.0):
        assert beta(ConfidenceModel(1.0, 0.0, 3, 0.1), gamma) == 1.0


def test_beta_reference_value():
    conf = ConfidenceModel(B=1.0, sigma=0.1, m=1, delta=math.exp(-1))
    assert beta(conf, 0.0) == pytest.approx(1.0 + 0.1 * math.sqrt(4.0), abs=1e-12)
    assert beta(conf, 0.0) == pytest.approx(1.2, abs=1e-12)


def test_beta_scale_and_validation():
    conf = ConfidenceModel(1.0, 0.1, 2, 0.1, beta_scale=2.0)
    assert beta(conf, 1.0) == pytest.approx(2.0 * beta(ConfidenceModel(1.0, 0.1, 2, 0.1), 1.0))
    with pytest.raises(ValueError):
        beta(conf, -1.0)
    with pytest.raises(ValueError):
        ConfidenceModel(1.0, 0.1, 2, 1.0)
    with pytest.raises(ValueError):
        ConfidenceModel(1.0, -0.1, 2, 0.5)


def test_prior_bounds_are_fully_clipped():
    st = GpState.empty(Kernel("se", (0.5,), 1.0), 2)
    conf = ConfidenceModel(1.0, 1.0, 1, 0.1)
    assert conf.beta(0.0) * 1.0 >= 2.0
    assert bounds(st, conf, [0.0, 0.0]) == (-1.0, 1.0)


def test_noiseless_containment_for_rkhs_ball(rng):
    k = Kernel("se", (0.4,), 1.0)
    f = RkhsTestFunction.random(rng, k, (-1, -1), (1, 1), 15, 1.0)
    assert f.norm <= 1.0 + 1e-12
    X = rng.uniform(-1, 1, (25, 2))
    st = fit(k, X, f(X), default_lambda(25))
    conf = ConfidenceModel(1.0, 0.0, 1, 0.1)
    S = rng.uniform(-1, 1, (1000, 2))
    lo, hi = bounds(st, conf, S)
    truth = f(S)
    assert np.all(lo <= truth + 1e-12) and np.all(truth <= hi + 1e-12)


def test_width_shrinks_at_observed_point():
    k = Kernel("se", (0.5,), 1.0)
    conf = ConfidenceModel(1.0, 0.05, 1, 0.1)
    st = update(GpState.empty(k, 1, 1.02), [0.1], 0.3)
    lo, hi = bounds(st, conf, [0.7])
    st2 = update(st, [0.7], 0.2)
    lo2, hi2 = bounds(st2, conf, [0.7])
    assert hi2 - lo2 < hi - lo


def test_bounds_ordered_even_when_mean_leaves_band():
    k = Kernel("se", (0.5,), 1.0)
    st = GpState.empty(k, 1, 1e-3)
    for _ in range(5):
        st = update(st, [0.0], 10.0)
    lo, hi = bounds(st, ConfidenceModel(1.0, 0.0, 1, 0.1), [0.0])
    assert -1.0 <= lo <= hi <= 1.0


def test_dimension_mismatch():
    st = GpState.empty(Kernel("se", (0.5,), 1.0), 2)
    with pytest.raises(DimensionMismatch):
        posterior(st, [0.1, 0.2, 0.3])
    with pytest.raises(DimensionMismatch):
        update(st, [0.1], 1.0)


def test_singular_system_is_reported():
    st = GpState.empty(Kernel("se", (0.5,), 1.0), 1, 1e-30)
    st = update(st, [0.0], 1.0)
    with pytest.raises(NumericalBreakdown):
        update(st, [0.0], 1.0)


def test_kernel_constraints():
    with pytest.raises(ValueError):
        Kernel("se", (0.5,), 1.5)
    with pytest.raises(UnsupportedKernel):
        Kernel("rq", (0.5,), 1.0)
    with pytest.raises(UnsupportedKernel):
        Kernel("matern", (0.5,), 1.0, nu=3.5)


def test_lambda_rule():
    assert default_lambda(4) == 1.5
    assert default_lambda(None) == 1e-2
    with pytest.raises(ValueError):
        default_lambda(0)


def test_with_lambda_refits(rng):
    k = Kernel("se", (0.5,), 1.0)
    X = rng.uniform(-1, 1, (8, 1))
    y = rng.normal(size=8)
    a = fit(k, X, y, 2.0).with_lambda(1.25)
    b = fit(k, X, y, 1.25)
    assert a.info_gain == pytest.approx(b.info_gain, abs=1e-14)
    assert np.allclose(posterior(a, X)[0], posterior(b, X)[0], atol=1e-14)


def test_text_roundtrip(rng):
    k = Kernel("matern", (0.5, 0.8), 0.6, nu=1.5)
    st = fit(k, rng.uniform(-1, 1, (6, 2)), rng.normal(size=6), 1.3)
    back = GpState.loads(st.dumps())
    assert back.kernel == st.kernel and back.lam == st.lam
    assert np.array_equal(back.inputs, st.inputs) and np.array_equal(back.targets, st.targets)
    q = rng.uniform(-1, 1, (4, 2))
    assert np.array_equal(posterior(back, q)[0], posterior(st, q)[0])
