import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import assert_grad_close, fd_grad, make_conjugate
from loomix.data import Dataset
from loomix.errors import InputError
from loomix.glm import GaussianUnknownNoiseModel, LogisticModel
from loomix.model import (
    LinearPredictorModel,
    TargetDensity,
    WeightedSampleSet,
    eval_log_target,
    grad_log_target,
    make_sample_set,
)
from loomix.priors import GaussianPrior, LaplacePrior


def _logistic(n=12, p=3, seed=1, prior="laplace"):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    y = (rng.uniform(size=n) < 0.5).astype(float)
    return LogisticModel(Dataset(y, X), prior)


def _unknown_noise(n=9, p=2, seed=2):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    return GaussianUnknownNoiseModel(Dataset(X @ np.ones(p) + rng.standard_normal(n), X))


MODELS = {
    "conjugate": lambda: make_conjugate(8, 3),
    "logistic-laplace": lambda: _logistic(),
    "logistic-gaussian": lambda: _logistic(prior="gaussian"),
    "unknown-noise": lambda: _unknown_noise(),
}
KINDS = ["posterior", "mixture", "bronze", "loo"]


def _target(model, kind):
    if kind == "loo":
        return TargetDensity.loo(model, 1)
    if kind == "mixture":
        return TargetDensity.mixture(model, np.linspace(0.5, 2.0, model.n_obs))
    return getattr(TargetDensity, kind)(model)


@pytest.mark.parametrize("name", sorted(MODELS))
@pytest.mark.parametrize("kind", KINDS)
def test_gradients_match_finite_differences(name, kind):
    model = MODELS[name]()
    t = _target(model, kind)
    rng = np.random.default_rng(3)
    for _ in range(5):
        theta = 0.7 * rng.standard_normal(model.dim) + 0.05
        num = fd_grad(lambda th: eval_log_target(t, th), theta)
        assert_grad_close(grad_log_target(t, theta), num)


def test_batched_evaluation_matches_single():
    model = _logistic()
    t = TargetDensity.mixture(model)
    thetas = np.random.default_rng(0).standard_normal((4, model.dim))
    lp, g = t.logp_and_grad(thetas)
    for k in range(4):
        lk, gk = t.logp_and_grad(thetas[k])
        assert lp[k] == pytest.approx(lk, rel=1e-13)
        np.testing.assert_allclose(g[k], gk, rtol=1e-12)


def test_single_observation_mixture_and_bronze_reduce_to_prior():
    m = make_conjugate(1, 2)
    theta = np.array([0.3, -1.2])
    prior = float(m.log_prior(theta))
    assert eval_log_target(TargetDensity.mixture(m), theta) == pytest.approx(prior, abs=1e-12)
    assert eval_log_target(TargetDensity.bronze(m), theta) == pytest.approx(prior, abs=1e-12)
    np.testing.assert_allclose(grad_log_target(TargetDensity.mixture(m), theta), m.grad_log_prior(theta), atol=1e-12)


def test_bronze_two_observation_gradient():
    m = make_conjugate(2, 2)
    theta = np.array([0.4, 0.1])
    expected = m.grad_log_prior(theta) + 0.5 * (m.grad_log_lik_term(0, theta) + m.grad_log_lik_term(1, theta))
    np.testing.assert_allclose(grad_log_target(TargetDensity.bronze(m), theta), expected, rtol=1e-12)


def test_bronze_value_is_tempered_posterior():
    m = make_conjugate(5, 2)
    theta = np.array([0.2, 0.3])
    expected = m.log_prior(theta) + 0.8 * m.log_lik_terms(theta).sum()
    assert eval_log_target(TargetDensity.bronze(m), theta) == pytest.approx(expected, rel=1e-13)


def test_mixture_matches_extended_precision_sum():
    # log sum_j alpha_j p(theta) p(y_{-j} | theta), term by term at 50 digits
    m = make_conjugate(7, 3, seed=4)
    alpha = np.linspace(1.0, 3.0, 7)
    t = TargetDensity.mixture(m, alpha)
    mpmath.mp.dps = 50
    for seed in range(3):
        theta = np.random.default_rng(seed).standard_normal(3)
        ell = [mpmath.mpf(float(v)) for v in m.log_lik_terms(theta)]
        total = mpmath.fsum(
            mpmath.mpf(float(alpha[j])) * mpmath.exp(mpmath.fsum(ell[:j] + ell[j + 1 :])) for j in range(7)
        )
        direct = float(mpmath.log(total)) + float(m.log_prior(theta))
        assert eval_log_target(t, theta) == pytest.approx(direct, rel=1e-10)


def test_mixture_alpha_scale_only_shifts_constant():
    m = make_conjugate(6, 2)
    alpha = np.arange(1.0, 7.0)
    t1, t2 = TargetDensity.mixture(m, alpha), TargetDensity.mixture(m, 13.0 * alpha)
    a, b = np.array([0.1, 0.2]), np.array([-1.0, 0.7])
    d1 = eval_log_target(t1, a) - eval_log_target(t1, b)
    d2 = eval_log_target(t2, a) - eval_log_target(t2, b)
    assert d1 == pytest.approx(d2, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), kind=st.sampled_from(["posterior", "mixture", "bronze"]))
def test_permutation_invariance(seed, kind):
    m = make_conjugate(6, 2, seed=seed)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(6)
    alpha = rng.uniform(0.5, 2.0, 6)
    mp = type(m)(Dataset(m.data.y[perm], m.data.X[perm]), m.sigma2, 0.0, 1.0)
    kw = {"alpha": alpha} if kind == "mixture" else {}
    kwp = {"alpha": alpha[perm]} if kind == "mixture" else {}
    t, tp = TargetDensity(m, kind, **kw), TargetDensity(mp, kind, **kwp)
    theta = rng.standard_normal(2)
    assert eval_log_target(t, theta) == pytest.approx(eval_log_target(tp, theta), rel=1e-12)


class _Toy(LinearPredictorModel):
    """Likelihood that is exactly zero where the linear predictor exceeds a cutoff."""

    def __init__(self, data, cut):
        super().__init__(data, GaussianPrior(0.0, 1.0, dim=data.p))
        self.cut = cut

    def _pointwise(self, eta):
        ell = np.where(eta > self.cut, -np.inf, -0.5 * eta**2)
        return ell, np.where(eta > self.cut, 0.0, -eta)


def test_mixture_handles_impossible_terms():
    X = np.array([[1.0], [2.0], [3.0]])
    m = _Toy(Dataset(np.zeros(3), X), cut=2.5)
    t = TargetDensity.mixture(m)
    theta = np.array([1.0])  # eta = (1, 2, 3): only the third term is impossible
    ell = np.array([-0.5, -2.0])
    expected = float(m.log_prior(theta)) + ell.sum()
    assert eval_log_target(t, theta) == pytest.approx(expected)
    # two impossible terms kill every component
    assert eval_log_target(t, np.array([1.5])) == -np.inf
    # dead component's gradient is the surviving LOO posterior's gradient
    g = grad_log_target(t, theta)
    assert g[0] == pytest.approx(-1.0 + (-1.0 * 1) + (-2.0 * 2))


def test_target_validation():
    m = make_conjugate(3, 2)
    with pytest.raises(InputError):
        TargetDensity.mixture(m, [1.0, 0.0, 1.0])
    with pytest.raises(InputError):
        TargetDensity.mixture(m, [1.0, 1.0])
    with pytest.raises(InputError):
        TargetDensity(m, "tempered")
    with pytest.raises(InputError):
        TargetDensity.loo(m, 3)
    with pytest.raises(InputError):
        eval_log_target(TargetDensity.posterior(m), np.array([np.nan, 0.0]))
    with pytest.raises(InputError):
        eval_log_target(TargetDensity.posterior(m), np.zeros(3))


def test_loglik_matrix_is_cache_coherent():
    m = _logistic()
    thetas = np.random.default_rng(0).standard_normal((5, m.dim))
    s = make_sample_set(m, thetas, "posterior", seed=0)
    assert s.loglik.shape == (m.n_obs, 5)
    for k in range(5):
        for i in range(m.n_obs):
            assert s.loglik[i, k] == pytest.approx(m.log_lik_term(i, thetas[k]), rel=1e-14)


def test_sample_set_needs_two_draws():
    with pytest.raises(InputError):
        WeightedSampleSet(np.zeros((1, 2)), np.zeros((3, 1)), "posterior")
    with pytest.raises(InputError):
        WeightedSampleSet(np.zeros((3, 2)), np.zeros((3, 4)), "posterior")


def test_priors_match_scipy():
    theta = np.array([0.3, -1.1, 2.0])
    lap = LaplacePrior(0.7, 3)
    assert lap.logpdf(theta) == pytest.approx(stats.laplace(scale=0.7).logpdf(theta).sum())
    g = GaussianPrior([0.0, 1.0, 0.0], [1.0, 2.0, 0.5], dim=3)
    assert g.logpdf(theta) == pytest.approx(
        stats.multivariate_normal([0, 1, 0], np.diag([1, 2, 0.5])).logpdf(theta)
    )
    full = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 1.5]])
    g = GaussianPrior(0.0, full, dim=3)
    assert g.logpdf(theta) == pytest.approx(stats.multivariate_normal(np.zeros(3), full).logpdf(theta))
    assert_grad_close(g.grad(theta), fd_grad(g.logpdf, theta))
    assert math.isclose(float(lap.grad(np.zeros(3))[0]), 0.0)
