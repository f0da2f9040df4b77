"""Closed-form machinery for the Gaussian linear model with known noise.

The model is ``y_i | theta ~ N(x_i^T theta, sigma2)`` with prior
``theta ~ N(theta0, Sigma)`` or a flat prior. Everything needed as ground
truth lives here: full and leave-one-out posteriors, the Bayesian hat
matrix, exact LOO predictive densities, mixture probabilities, exact i.i.d.
samplers and closed-form asymptotic variances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from .data import Dataset
from .errors import InputError, NumericalError
from .linalg import chol_update, cholesky, logdet_chol
from .model import LinearPredictorModel, WeightedSampleSet
from .priors import FLAT, FlatPrior, GaussianPrior

__all__ = [
    "GaussianLinearModel",
    "GaussianDist",
    "MixtureExact",
    "bayesian_leverages",
    "full_posterior",
    "loo_posterior",
    "hat_matrix",
    "loo_predictive",
    "log_loo_predictive",
    "mixture_exact",
    "sample_posterior_iid",
    "sample_mixture_iid",
    "sample_loo_iid",
    "sample_bronze_iid",
    "av_post_exact",
    "log_av_post_exact",
    "av_mix_bound",
    "empirical_bayes_sigma2",
]

_LOG_2PI = math.log(2 * math.pi)
LEVERAGE_SINGULAR_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class GaussianDist:
    """Multivariate normal stored through the lower Cholesky factor of its covariance."""

    mean: np.ndarray
    cov_chol: np.ndarray

    def __post_init__(self):
        if np.any(np.diag(self.cov_chol) <= 0):
            raise NumericalError("covariance factor must have a positive diagonal")

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def cov(self) -> np.ndarray:
        return self.cov_chol @ self.cov_chol.T

    @property
    def log_norm_const(self) -> float:
        return -0.5 * self.dim * _LOG_2PI - 0.5 * logdet_chol(self.cov_chol)

    def logpdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        delta = (theta - self.mean).reshape(-1, self.dim).T
        z = solve_triangular(self.cov_chol, delta, lower=True)
        out = self.log_norm_const - 0.5 * np.sum(z * z, axis=0)
        return out.reshape(theta.shape[:-1]) if theta.ndim > 1 else float(out[0])

    def sample(self, rng, size: int) -> np.ndarray:
        return self.mean + rng.standard_normal((size, self.dim)) @ self.cov_chol.T


class GaussianLinearModel(LinearPredictorModel):
    """Conjugate linear regression with known noise variance.

    Parameters
    ----------
    data : Dataset
    sigma2 : float
        Noise variance.
    theta0 : array_like or float
        Prior mean (ignored for the flat prior).
    Sigma : float, array_like or FLAT
        Prior covariance: scalar (isotropic), vector (diagonal), full matrix,
        or :data:`loomix.priors.FLAT` for the improper flat prior.
    """

    def __init__(self, data: Dataset, sigma2: float = 1.0, theta0=0.0, Sigma=1.0):
        if not np.isfinite(sigma2) or sigma2 <= 0:
            raise InputError("sigma2 must be positive")
        self.sigma2 = float(sigma2)
        if isinstance(Sigma, FlatPrior):
            prior = FLAT
            if data.p > data.n or np.linalg.matrix_rank(data.X) < data.p:
                raise NumericalError("flat prior needs X^T X invertible (full-rank X, p <= n)")
        else:
            prior = GaussianPrior(theta0, Sigma, dim=data.p)
        super().__init__(data, prior)
        self.theta0 = np.zeros(data.p) if prior is FLAT else prior.mean

    @property
    def flat(self) -> bool:
        return self.prior is FLAT

    def _pointwise(self, eta):
        r = self._y - eta
        ell = -0.5 * (_LOG_2PI + math.log(self.sigma2)) - 0.5 * r * r / self.sigma2
        return ell, r / self.sigma2

    @cached_property
    def _prior_precision(self) -> np.ndarray:
        if self.flat:
            return np.zeros((self.dim, self.dim))
        return self.prior.precision

    @cached_property
    def _posterior(self):
        X, y, s2 = self._X, self._y, self.sigma2
        P = X.T @ X / s2 + self._prior_precision
        LP = cholesky(P, "posterior precision")
        b = X.T @ y / s2
        if not self.flat:
            b = b + self._prior_precision @ self.theta0
        m = cho_solve((LP, True), b)
        V = cho_solve((LP, True), np.eye(self.dim))
        V = 0.5 * (V + V.T)
        LV = cholesky(V, "posterior covariance")
        return P, m, V, LV

    @cached_property
    def log_marginal_likelihood(self) -> float:
        """``log p(y)``; for the flat prior the integral of the likelihood over ``theta``."""
        _, m, V, LV = self._posterior
        r = self._y - self._X @ m
        ll = np.sum(-0.5 * (_LOG_2PI + math.log(self.sigma2)) - 0.5 * r * r / self.sigma2)
        return float(ll + self.log_prior(m) + 0.5 * self.dim * _LOG_2PI + 0.5 * logdet_chol(LV))

    @cached_property
    def leverages(self) -> np.ndarray:
        _, _, V, _ = self._posterior
        X = self._X
        return np.einsum("ij,jk,ik->i", X, V, X) / self.sigma2

    @cached_property
    def loo_summary(self) -> dict:
        """Vectorized leave-one-out quantities for all observations at once.

        Keys: ``h`` leverages, ``means`` (n x p) LOO posterior means, ``U``
        (n x p) vectors with ``V_{-i} = V + u_i u_i^T``, ``log_mu`` exact log
        LOO predictive densities, ``log_marg`` log ``p(y_{-i})``.
        """
        _, m, V, LV = self._posterior
        X, y, s2 = self._X, self._y, self.sigma2
        h = self.leverages
        if np.any(h >= 1 - LEVERAGE_SINGULAR_TOL):
            i = int(np.argmax(h))
            raise NumericalError(f"observation {i} has leverage {h[i]:.15g}; LOO posterior is improper")
        resid = y - X @ m
        VX = X @ V  # row i is (V x_i)^T
        means = m + VX * (-resid / (s2 * (1 - h)))[:, None]
        U = VX / np.sqrt(s2 * (1 - h))[:, None]
        loo_resid = resid / (1 - h)
        loo_var = s2 / (1 - h)
        log_mu = -0.5 * (_LOG_2PI + np.log(loo_var)) - 0.5 * loo_resid**2 / loo_var

        # candidate's formula evaluated at each LOO posterior mean
        R = y[None, :] - means @ X.T  # R[i, j] = y_j - x_j^T m_{-i}
        ll = -0.5 * (_LOG_2PI + math.log(s2)) - 0.5 * R * R / s2
        np.fill_diagonal(ll, 0.0)
        logdetV_loo = logdet_chol(LV) - np.log1p(-h)
        log_marg = (
            ll.sum(axis=1)
            + np.asarray(self.log_prior(means))
            + 0.5 * self.dim * _LOG_2PI
            + 0.5 * logdetV_loo
        )
        return {"h": h, "means": means, "U": U, "log_mu": log_mu, "log_marg": log_marg}


def bayesian_leverages(X, sigma2: float, Sigma) -> np.ndarray:
    """Diagonal of ``X (X^T X + sigma2 Sigma^{-1})^{-1} X^T`` without forming the posterior.

    Uses the ``n x n`` form ``K (K + sigma2 I)^{-1}`` with ``K = X Sigma X^T``
    when the prior is proper, so ``p >> n`` stays cheap.
    """
    return np.diag(_hat(np.asarray(X, dtype=float), sigma2, Sigma)).copy()


def _hat(X, sigma2, Sigma):
    n, p = X.shape
    if isinstance(Sigma, FlatPrior):
        if p > n or np.linalg.matrix_rank(X) < p:
            raise NumericalError("flat prior needs X^T X invertible (full-rank X, p <= n)")
        Q, _ = np.linalg.qr(X)
        H = Q @ Q.T
    else:
        S = np.asarray(Sigma, dtype=float)
        if S.ndim == 2:
            K = X @ S @ X.T
        else:
            K = (X * np.broadcast_to(S, (p,))) @ X.T
        K = 0.5 * (K + K.T)
        L = cholesky(K + sigma2 * np.eye(n), "K + sigma2 I")
        # H = (K + sigma2 I)^{-1} K; solving keeps small leverages accurate
        H = cho_solve((L, True), K)
    return 0.5 * (H + H.T)


def full_posterior(m: GaussianLinearModel) -> GaussianDist:
    _, mean, _, LV = m._posterior
    return GaussianDist(mean.copy(), LV.copy())


def loo_posterior(m: GaussianLinearModel, i: int) -> GaussianDist:
    """``p(theta | y_{-i})`` by a rank-one downdate of the posterior precision.

    The covariance factor is obtained as a rank-one *update* of the full
    posterior covariance factor, ``V_{-i} = V + V x_i x_i^T V / (sigma2 (1 - H_ii))``.
    """
    _check_index(m, i)
    _, mean, V, LV = m._posterior
    x = m._X[i]
    h = float(x @ V @ x) / m.sigma2
    if h >= 1 - LEVERAGE_SINGULAR_TOL:
        raise NumericalError(f"observation {i} has leverage {h:.15g}; LOO posterior is improper")
    Vx = V @ x
    r = m._y[i] - x @ mean
    mean_i = mean - Vx * r / (m.sigma2 * (1 - h))
    L_i = chol_update(LV, Vx / math.sqrt(m.sigma2 * (1 - h)))
    return GaussianDist(mean_i, L_i)


def hat_matrix(m: GaussianLinearModel) -> np.ndarray:
    """Bayesian (ridge) hat matrix ``X (X^T X + sigma2 Sigma^{-1})^{-1} X^T``."""
    Sigma = FLAT if m.flat else m.prior.cov
    return _hat(m._X, m.sigma2, Sigma)


def log_loo_predictive(m: GaussianLinearModel, i: int) -> float:
    """``log p(y_i | y_{-i})`` from the explicit LOO posterior."""
    q = loo_posterior(m, i)
    x = m._X[i]
    z = q.cov_chol.T @ x
    var = m.sigma2 + float(z @ z)
    r = m._y[i] - float(x @ q.mean)
    return -0.5 * (_LOG_2PI + math.log(var)) - 0.5 * r * r / var


def loo_predictive(m: GaussianLinearModel, i: int) -> float:
    return math.exp(log_loo_predictive(m, i))


@dataclass(frozen=True, eq=False)
class MixtureExact:
    """The alpha-weighted mixture of LOO posteriors in closed form."""

    model: GaussianLinearModel
    log_pis: np.ndarray
    alpha: np.ndarray

    @property
    def pis(self) -> np.ndarray:
        return np.exp(self.log_pis)

    @cached_property
    def components(self) -> tuple[GaussianDist, ...]:
        return tuple(loo_posterior(self.model, i) for i in range(self.model.n_obs))


def mixture_exact(m: GaussianLinearModel, alpha=None) -> MixtureExact:
    """Mixture probabilities ``pi_i ∝ alpha_i p(y_{-i})``, computed in log space."""
    n = m.n_obs
    alpha = np.ones(n) if alpha is None else np.asarray(alpha, dtype=float)
    if alpha.shape != (n,) or np.any(alpha <= 0) or not np.all(np.isfinite(alpha)):
        raise InputError("alpha must be a finite, strictly positive vector of length n")
    a = np.log(alpha) + m.loo_summary["log_marg"]
    log_pis = a - logsumexp(a)
    return MixtureExact(m, log_pis, alpha)


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _check_S(S):
    if S < 2:
        raise InputError("S must be at least 2")


def sample_posterior_iid(m: GaussianLinearModel, S: int, seed=None) -> WeightedSampleSet:
    _check_S(S)
    rng = _rng(seed)
    _, mean, _, LV = m._posterior
    thetas = mean + rng.standard_normal((S, m.dim)) @ LV.T
    return WeightedSampleSet(thetas, m.loglik_matrix(thetas), "posterior", seed)


def sample_mixture_iid(me: MixtureExact, S: int, seed=None) -> WeightedSampleSet:
    """Draw the component from ``pi`` then a Gaussian draw from that LOO posterior.

    ``theta = m_{-i} + L z + u_i w`` with ``z``, ``w`` standard normal has
    covariance ``L L^T + u_i u_i^T = V_{-i}``, so no per-component
    factorization is needed.
    """
    _check_S(S)
    rng = _rng(seed)
    m = me.model
    _, _, _, LV = m._posterior
    loo = m.loo_summary
    comp = rng.choice(m.n_obs, size=S, p=me.pis / me.pis.sum())
    z = rng.standard_normal((S, m.dim))
    w = rng.standard_normal(S)
    thetas = loo["means"][comp] + z @ LV.T + loo["U"][comp] * w[:, None]
    return WeightedSampleSet(thetas, m.loglik_matrix(thetas), "mixture", seed, comp)


def sample_loo_iid(m: GaussianLinearModel, i: int, S: int, seed=None) -> WeightedSampleSet:
    _check_S(S)
    rng = _rng(seed)
    thetas = loo_posterior(m, i).sample(rng, S)
    return WeightedSampleSet(thetas, m.loglik_matrix(thetas), f"loo:{i}", seed)


def sample_bronze_iid(m: GaussianLinearModel, S: int, seed=None) -> WeightedSampleSet:
    """Exact draws from the tempered posterior ``p(theta) prod_i p(y_i|theta)^{(n-1)/n}``.

    Tempering a Gaussian likelihood is the same as inflating the noise
    variance by ``n / (n - 1)``.
    """
    _check_S(S)
    n = m.n_obs
    if n == 1:
        if m.flat:
            raise NumericalError("tempered posterior with n=1 is the flat prior, which is improper")
        thetas = m.prior.sample(_rng(seed), S, m.dim)
    else:
        tempered = GaussianLinearModel(
            m.data, m.sigma2 * n / (n - 1), m.theta0, FLAT if m.flat else m.prior.cov
        )
        _, mean, _, LV = tempered._posterior
        thetas = mean + _rng(seed).standard_normal((S, m.dim)) @ LV.T
    return WeightedSampleSet(thetas, m.loglik_matrix(thetas), "bronze", seed)


def av_post_exact(m: GaussianLinearModel, i: int) -> float:
    """Relative asymptotic variance of the posterior (harmonic-mean) estimator.

    ``int p(theta|y_{-i})^2 / p(theta|y) dtheta - 1`` as a Gaussian ratio
    integral. Returns ``math.inf`` exactly when ``H_ii >= 0.5``. Finite
    values too large for a float saturate at the largest finite float;
    :func:`log_av_post_exact` gives them on the log scale.
    """
    log1p_av = log_av_post_exact(m, i)
    if math.isinf(log1p_av):
        return math.inf
    if log1p_av > _LOG_FLOAT_MAX:
        return _FLOAT_MAX
    return float(math.expm1(log1p_av))


_FLOAT_MAX = float(np.finfo(float).max)
_LOG_FLOAT_MAX = math.log(_FLOAT_MAX)


def log_av_post_exact(m: GaussianLinearModel, i: int) -> float:
    """``log(1 + AV)`` for the posterior estimator; ``inf`` when ``H_ii >= 0.5``."""
    _check_index(m, i)
    P, mean, V, _ = m._posterior
    x = m._X[i]
    h = float(x @ V @ x) / m.sigma2
    if h >= 0.5:
        return math.inf
    q = loo_posterior(m, i)
    xx = np.outer(x, x) / m.sigma2
    A_inv = P - xx  # LOO precision
    Q = P - 2.0 * xx  # 2 * LOO precision - full precision
    LA = cholesky(A_inv, "LOO precision")
    try:
        LQ = cholesky(Q, "2 P_{-i} - P")
    except NumericalError:
        # Q is positive definite iff H_ii < 0.5; rounding can put h just below
        return math.inf
    LP = cholesky(P, "posterior precision")
    a = q.mean - mean  # centre at the full posterior mean
    g = 2.0 * (A_inv @ a)
    c = cho_solve((LQ, True), g)
    quad = 2.0 * float(a @ A_inv @ a) - float(c @ g)
    # 0.5 log|B| - log|A| - 0.5 log|Q| with B = P^{-1}, A = A_inv^{-1}
    return -0.5 * logdet_chol(LP) + logdet_chol(LA) - 0.5 * logdet_chol(LQ) - 0.5 * quad


def av_mix_bound(m: GaussianLinearModel, me: MixtureExact, i: int) -> float:
    """Upper bound ``pi_i^{-1} (1 + mu_i^{-1} int p(y_i|theta) p(theta|y) dtheta)``."""
    _check_index(m, i)
    _, mean, V, _ = m._posterior
    x = m._X[i]
    var = m.sigma2 + float(x @ V @ x)
    r = m._y[i] - float(x @ mean)
    log_pred_full = -0.5 * (_LOG_2PI + math.log(var)) - 0.5 * r * r / var
    log_mu = float(m.loo_summary["log_mu"][i])
    return float(math.exp(-me.log_pis[i]) * (1.0 + math.exp(log_pred_full - log_mu)))


def empirical_bayes_sigma2(
    data: Dataset,
    Sigma=1.0,
    theta0=0.0,
    scale_prior_with_noise: bool = True,
    bounds=(1e-6, 1e6),
    xatol: float = 1e-8,
) -> float:
    """Maximize ``log p(y | sigma2)`` over ``log sigma2``.

    With ``scale_prior_with_noise`` the prior is ``theta | sigma2 ~ N(theta0, sigma2 Sigma)``.
    """
    X, y = data.X, data.y
    p = data.p
    S = np.asarray(Sigma, dtype=float)
    K = X @ S @ X.T if S.ndim == 2 else (X * np.broadcast_to(S, (p,))) @ X.T
    lam, Qm = np.linalg.eigh(0.5 * (K + K.T))
    lam = np.clip(lam, 0.0, None)
    r = Qm.T @ (y - X @ np.broadcast_to(np.asarray(theta0, dtype=float), (p,)))
    n = data.n

    def neg_log_marg(log_s2):
        s2 = math.exp(log_s2)
        ev = s2 * (1.0 + lam) if scale_prior_with_noise else s2 + lam
        return 0.5 * (n * _LOG_2PI + np.sum(np.log(ev)) + np.sum(r * r / ev))

    res = minimize_scalar(
        neg_log_marg,
        bounds=(math.log(bounds[0]), math.log(bounds[1])),
        method="bounded",
        options={"xatol": xatol},
    )
    return float(math.exp(res.x))


def _check_index(m, i):
    if not 0 <= i < m.n_obs:
        raise InputError(f"observation index {i} out of range")
