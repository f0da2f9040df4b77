import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from conftest import make_conjugate
from loomix.conjugate import (
    GaussianLinearModel,
    av_mix_bound,
    av_post_exact,
    bayesian_leverages,
    empirical_bayes_sigma2,
    full_posterior,
    hat_matrix,
    log_loo_predictive,
    loo_posterior,
    loo_predictive,
    mixture_exact,
    sample_bronze_iid,
    sample_loo_iid,
    sample_mixture_iid,
    sample_posterior_iid,
)
from loomix.data import Dataset
from loomix.errors import InputError, NumericalError
from loomix.priors import FLAT


def _refit(m, i):
    return GaussianLinearModel(m.data.drop(i), m.sigma2, m.theta0, FLAT if m.flat else m.prior.cov)


def test_scalar_posterior_update():
    m = GaussianLinearModel(Dataset([2.0], [[1.0]]), 1.0, 0.0, 1.0)
    post = full_posterior(m)
    assert post.mean[0] == pytest.approx(1.0)
    assert post.cov[0, 0] == pytest.approx(0.5)
    assert hat_matrix(m)[0, 0] == pytest.approx(0.5)
    assert av_post_exact(m, 0) == math.inf


def test_zero_design_gives_prior():
    m = GaussianLinearModel(Dataset([1.0, -2.0], np.zeros((2, 2))), 1.0, [0.5, -0.5], 2.0)
    post = full_posterior(m)
    np.testing.assert_allclose(post.mean, [0.5, -0.5])
    np.testing.assert_allclose(post.cov, 2.0 * np.eye(2))


def test_posterior_density_matches_quadrature():
    # prior x likelihood / marginal, with the marginal from numerical integration (p = 2)
    m = make_conjugate(5, 2, seed=7)
    post = full_posterior(m)

    def joint(a, b):
        th = np.array([a, b])
        return math.exp(float(m.log_prior(th)) + float(m.log_lik_terms(th).sum()))

    c = post.mean
    r = 8 * np.sqrt(np.diag(post.cov))
    Z, _ = integrate.dblquad(
        lambda b, a: joint(a, b), c[0] - r[0], c[0] + r[0], c[1] - r[1], c[1] + r[1], epsabs=0, epsrel=1e-11
    )
    assert m.log_marginal_likelihood == pytest.approx(math.log(Z), abs=1e-8)
    for th in np.random.default_rng(0).standard_normal((5, 2)) * 0.3 + c:
        dens = joint(*th) / Z
        assert math.exp(float(post.logpdf(th))) == pytest.approx(dens, rel=1e-8)


def test_log_marginal_matches_multivariate_normal():
    m = make_conjugate(12, 4, sigma2=0.7, Sigma=2.0, seed=3)
    X = m.data.X
    cov = 2.0 * X @ X.T + 0.7 * np.eye(12)
    assert m.log_marginal_likelihood == pytest.approx(
        stats.multivariate_normal(np.zeros(12), cov).logpdf(m.data.y), rel=1e-12
    )


@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(2, 50),
    p=st.integers(1, 30),
    seed=st.integers(0, 2**31),
    sigma2=st.floats(0.1, 5.0),
    tau2=st.floats(0.1, 10.0),
)
def test_loo_posterior_equals_direct_refit(n, p, seed, sigma2, tau2):
    m = make_conjugate(n, p, sigma2=sigma2, Sigma=tau2, seed=seed)
    for i in {0, n // 2, n - 1}:
        q, d = loo_posterior(m, i), full_posterior(_refit(m, i))
        scale = np.max(np.abs(d.mean)) + 1e-300
        assert np.max(np.abs(q.mean - d.mean)) <= 1e-10 * max(scale, 1.0)
        np.testing.assert_allclose(q.cov, d.cov, rtol=1e-10, atol=1e-10 * np.max(np.abs(d.cov)))


def test_loo_posterior_two_observations():
    m = GaussianLinearModel(Dataset([1.0, 3.0], [[2.0], [0.5]]), 1.5, 0.0, 2.0)
    q = loo_posterior(m, 0)
    # direct update on (x=0.5, y=3)
    prec = 1 / 2.0 + 0.25 / 1.5
    assert q.cov[0, 0] == pytest.approx(1 / prec, rel=1e-12)
    assert q.mean[0] == pytest.approx((0.5 * 3.0 / 1.5) / prec, rel=1e-12)


def test_vectorized_loo_summary_matches_per_index():
    m = make_conjugate(15, 6, seed=11)
    loo = m.loo_summary
    for i in range(15):
        q = loo_posterior(m, i)
        np.testing.assert_allclose(loo["means"][i], q.mean, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(m._posterior[2] + np.outer(loo["U"][i], loo["U"][i]), q.cov, atol=1e-12)
        assert loo["log_mu"][i] == pytest.approx(log_loo_predictive(m, i), rel=1e-12)
        assert loo["log_marg"][i] == pytest.approx(_refit(m, i).log_marginal_likelihood, rel=1e-10)


def test_uninformative_row():
    X = np.array([[1.0, 0.5], [0.0, 0.0], [-1.0, 2.0]])
    m = GaussianLinearModel(Dataset([0.3, 1.7, -0.4], X), 0.8, 0.0, 1.0)
    q, f = loo_posterior(m, 1), full_posterior(m)
    np.testing.assert_allclose(q.mean, f.mean, atol=1e-14)
    np.testing.assert_allclose(q.cov, f.cov, atol=1e-14)
    assert loo_predictive(m, 1) == pytest.approx(stats.norm(0, math.sqrt(0.8)).pdf(1.7))
    assert av_post_exact(m, 1) == pytest.approx(0.0, abs=1e-12)


def test_single_observation_predictive_is_prior_predictive():
    m = GaussianLinearModel(Dataset([0.7], [[1.0, 2.0]]), 0.5, [0.1, 0.2], 3.0)
    var = 0.5 + 3.0 * 5.0
    assert loo_predictive(m, 0) == pytest.approx(stats.norm(0.5, math.sqrt(var)).pdf(0.7), rel=1e-12)


def test_loo_predictive_matches_quadrature():
    m = make_conjugate(8, 2, seed=5)
    for i in range(8):
        q = loo_posterior(m, i)
        x = m.data.X[i]
        mu_eta, sd_eta = float(x @ q.mean), math.sqrt(float(x @ q.cov @ x))
        f = lambda e: stats.norm(e, math.sqrt(m.sigma2)).pdf(m.data.y[i]) * stats.norm(mu_eta, sd_eta).pdf(e)
        val, _ = integrate.quad(f, mu_eta - 12 * sd_eta, mu_eta + 12 * sd_eta, epsabs=0, epsrel=1e-12)
        assert loo_predictive(m, i) == pytest.approx(val, rel=1e-8)


def test_hat_matrix_properties():
    m = make_conjugate(12, 5, Sigma=0.5, seed=2)
    H = hat_matrix(m)
    np.testing.assert_allclose(H, H.T, atol=1e-14)
    ev = np.linalg.eigvalsh(H)
    assert ev.min() >= -1e-12 and ev.max() <= 1 + 1e-12
    X = m.data.X
    direct = X @ np.linalg.solve(X.T @ X + m.sigma2 / 0.5 * np.eye(5), X.T)
    np.testing.assert_allclose(H, direct, atol=1e-12)
    np.testing.assert_allclose(np.diag(H), m.leverages, atol=1e-12)


def test_flat_prior_hat_matrix():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((4, 4))
    np.testing.assert_allclose(bayesian_leverages(X, 1.0, FLAT), np.ones(4), atol=1e-12)
    X = rng.standard_normal((20, 6))
    assert np.trace(hat_matrix(GaussianLinearModel(Dataset(np.zeros(20), X), 1.0, 0.0, FLAT))) == pytest.approx(6)


def test_flat_prior_needs_full_rank():
    X = np.ones((5, 2))
    with pytest.raises(NumericalError):
        GaussianLinearModel(Dataset(np.zeros(5), X), 1.0, 0.0, FLAT)
    with pytest.raises(NumericalError):
        GaussianLinearModel(Dataset(np.zeros(2), np.eye(2)[:, :1].repeat(3, axis=1)), 1.0, 0.0, FLAT)


def test_flat_prior_improper_loo_raises():
    m = GaussianLinearModel(Dataset(np.zeros(3), np.eye(3)), 1.0, 0.0, FLAT)
    with pytest.raises(NumericalError):
        loo_posterior(m, 0)
    with pytest.raises(NumericalError):
        _ = m.loo_summary


def test_wide_design_leverages_use_kernel_form():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((6, 300))
    tau2 = 10 / 300
    h = bayesian_leverages(X, 1.0, tau2)
    direct = np.diag(X @ np.linalg.solve(X.T @ X + (1.0 / tau2) * np.eye(300), X.T))
    np.testing.assert_allclose(h, direct, atol=1e-10)


def test_invalid_sigma2():
    with pytest.raises(InputError):
        GaussianLinearModel(Dataset([1.0], [[1.0]]), 0.0)


def test_mixture_probabilities_identity():
    m = make_conjugate(6, 2, seed=9)
    me = mixture_exact(m)
    assert me.pis.sum() == pytest.approx(1.0, abs=1e-12)
    prod = me.log_pis + m.loo_summary["log_mu"]
    assert np.ptp(prod) < 1e-10
    # against the per-index predictive
    lm = np.array([log_loo_predictive(m, i) for i in range(6)])
    np.testing.assert_allclose(np.exp(me.log_pis + lm - (me.log_pis + lm)[0]), 1.0, rtol=1e-10)


def test_mixture_probabilities_symmetric_and_constructed():
    X = np.ones((4, 1))
    m = GaussianLinearModel(Dataset(np.full(4, 0.3), X), 1.0, 0.0, 1.0)
    np.testing.assert_allclose(mixture_exact(m).pis, 0.25, rtol=1e-12)
    m = make_conjugate(2, 1, seed=4)
    lm = m.loo_summary["log_marg"]
    alpha = np.exp(np.log([2.0, 1.0]) - lm)  # makes alpha_i p(y_{-i}) proportional to (2, 1)
    np.testing.assert_allclose(mixture_exact(m, alpha).pis, [2 / 3, 1 / 3], rtol=1e-12)
    with pytest.raises(InputError):
        mixture_exact(m, [1.0, -1.0])


def test_mixture_components_are_loo_posteriors():
    m = make_conjugate(4, 2)
    me = mixture_exact(m)
    for i, c in enumerate(me.components):
        np.testing.assert_allclose(c.mean, loo_posterior(m, i).mean)


def test_posterior_sampler_moments_and_determinism():
    m = make_conjugate(10, 3, seed=1)
    s = sample_posterior_iid(m, 100_000, 42)
    post = full_posterior(m)
    se = np.sqrt(np.diag(post.cov) / s.S)
    assert np.all(np.abs(s.thetas.mean(axis=0) - post.mean) < 4 * se)
    np.testing.assert_array_equal(s.thetas, sample_posterior_iid(m, 100_000, 42).thetas)
    np.testing.assert_allclose(s.loglik[:, :3], m.loglik_matrix(s.thetas[:3]).reshape(10, 3))


def test_mixture_sampler_component_frequencies():
    m = make_conjugate(5, 2, seed=6)
    me = mixture_exact(m)
    S = 100_000
    s = sample_mixture_iid(me, S, 3)
    freq = np.bincount(s.component, minlength=5) / S
    pi = me.pis
    assert np.all(np.abs(freq - pi) < 4 * np.sqrt(pi * (1 - pi) / S))
    np.testing.assert_array_equal(s.thetas, sample_mixture_iid(me, S, 3).thetas)
    # draws from component i have the LOO posterior moments
    i = int(np.argmax(pi))
    sel = s.thetas[s.component == i]
    q = loo_posterior(m, i)
    assert np.all(np.abs(sel.mean(axis=0) - q.mean) < 4 * np.sqrt(np.diag(q.cov) / len(sel)))
    np.testing.assert_allclose(np.cov(sel.T), q.cov, rtol=0.05, atol=0.01)


def test_loo_and_bronze_samplers():
    m = make_conjugate(6, 2, seed=8)
    s = sample_loo_iid(m, 2, 50_000, 0)
    q = loo_posterior(m, 2)
    assert np.all(np.abs(s.thetas.mean(axis=0) - q.mean) < 4 * np.sqrt(np.diag(q.cov) / s.S))
    b = sample_bronze_iid(m, 50_000, 0)
    # tempered posterior precision
    P = m.prior.precision + (5 / 6) * m.data.X.T @ m.data.X / m.sigma2
    np.testing.assert_allclose(np.cov(b.thetas.T), np.linalg.inv(P), rtol=0.05)
    with pytest.raises(InputError):
        sample_posterior_iid(m, 1, 0)


def test_av_post_matches_quadrature():
    m = GaussianLinearModel(Dataset([0.4, -1.0, 0.8], [[0.9], [0.3], [-0.5]]), 1.0, 0.0, 1.0)
    i = 0
    assert 0.3 < m.leverages[i] < 0.5
    q, f = loo_posterior(m, i), full_posterior(m)
    mq, sq = q.mean[0], math.sqrt(q.cov[0, 0])
    mf, sf = f.mean[0], math.sqrt(f.cov[0, 0])
    g = lambda t: math.exp(2 * stats.norm(mq, sq).logpdf(t) - stats.norm(mf, sf).logpdf(t))
    val, _ = integrate.quad(g, mq - 60 * sq, mq + 60 * sq, epsabs=0, epsrel=1e-12, limit=200)
    assert av_post_exact(m, i) == pytest.approx(val - 1.0, rel=1e-6)


def test_av_post_multivariate_matches_monte_carlo_free_formula():
    # E_post[(q/p)^2] computed via the Gaussian product rule in a different parameterization
    m = make_conjugate(15, 3, Sigma=1.0, seed=12)
    for i in range(15):
        if m.leverages[i] >= 0.5:
            continue
        q, f = loo_posterior(m, i), full_posterior(m)
        Pq, Pf = np.linalg.inv(q.cov), np.linalg.inv(f.cov)
        A = 2 * Pq - Pf
        b = 2 * Pq @ q.mean - Pf @ f.mean
        c = 2 * q.mean @ Pq @ q.mean - f.mean @ Pf @ f.mean
        mu = np.linalg.solve(A, b)
        log_int = (
            -np.linalg.slogdet(q.cov)[1]
            + 0.5 * np.linalg.slogdet(f.cov)[1]
            - 0.5 * np.linalg.slogdet(A)[1]
            - 0.5 * (c - b @ mu)
        )
        assert av_post_exact(m, i) == pytest.approx(math.expm1(log_int), rel=1e-8, abs=1e-12)


def test_av_mix_bound_basic():
    m = GaussianLinearModel(Dataset([0.7], [[1.5]]), 1.0, 0.0, 1.0)
    me = mixture_exact(m)
    assert me.pis[0] == pytest.approx(1.0)
    var_full = 1.0 + 1.5**2 * full_posterior(m).cov[0, 0]
    pred = stats.norm(1.5 * full_posterior(m).mean[0], math.sqrt(var_full)).pdf(0.7)
    assert av_mix_bound(m, me, 0) == pytest.approx(1 + pred / loo_predictive(m, 0), rel=1e-12)
    m = make_conjugate(12, 4, seed=3)
    me = mixture_exact(m)
    assert all(av_mix_bound(m, me, i) >= 1 for i in range(12))


def test_empirical_bayes_sigma2_matches_grid():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((40, 3))
    y = X @ np.array([1.0, -0.5, 0.2]) + 0.7 * rng.standard_normal(40)
    data = Dataset(y, X)
    s2 = empirical_bayes_sigma2(data, Sigma=1.0)

    def lml(v):
        return GaussianLinearModel(data, v, 0.0, v * 1.0).log_marginal_likelihood

    grid = np.exp(np.linspace(np.log(s2) - 0.05, np.log(s2) + 0.05, 201))
    vals = [lml(v) for v in grid]
    assert lml(s2) >= max(vals) - 1e-9
    s2b = empirical_bayes_sigma2(data, Sigma=1.0, scale_prior_with_noise=False)
    lml2 = lambda v: GaussianLinearModel(data, v, 0.0, 1.0).log_marginal_likelihood
    assert lml2(s2b) >= max(lml2(s2b * f) for f in (0.98, 0.99, 1.01, 1.02))


def test_index_errors():
    m = make_conjugate(3, 1)
    with pytest.raises(InputError):
        loo_posterior(m, 3)
    with pytest.raises(InputError):
        av_post_exact(m, -1)


def test_av_post_log_scale_and_saturation():
    from loomix.conjugate import log_av_post_exact

    m = make_conjugate(10, 2, Sigma=1.0, seed=21)
    i = int(np.argmin(m.leverages))
    assert math.log1p(av_post_exact(m, i)) == pytest.approx(log_av_post_exact(m, i), rel=1e-12)
    # leverage just below 0.5 with a far outlying response: finite but beyond float range
    X = np.array([[1.0], [0.6], [-0.8]])
    rest = 0.36 + 0.64 + 1.0
    X[0, 0] = math.sqrt((0.5 - 1e-7) * rest / (0.5 + 1e-7))
    big = GaussianLinearModel(Dataset([1e3, 0.0, 0.0], X), 1.0, 0.0, 1.0)
    assert big.leverages[0] < 0.5
    assert log_av_post_exact(big, 0) > 710
    assert av_post_exact(big, 0) == np.finfo(float).max
