"""Non-conjugate backends: logistic regression and Gaussian regression with unknown noise."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit, gammaln

from .data import Dataset
from .errors import DataError, InputError
from .model import PointwiseModel, LinearPredictorModel
from .priors import GaussianPrior, LaplacePrior

__all__ = [
    "LogisticModel",
    "GaussianUnknownNoiseModel",
    "logistic_loglik",
    "laplace_log_prior",
    "default_laplace_scale",
]

_LOG_2PI = math.log(2 * math.pi)


def default_laplace_scale(p: int) -> float:
    """Laplace scale ``sqrt(50 / p)``: per-coefficient variance ``2 b^2 = 100 / p``."""
    return math.sqrt(50.0 / p)


def logistic_loglik(y, eta):
    """Bernoulli log-mass with success probability ``sigmoid(eta)``.

    ``y log s(eta) + (1 - y) log(1 - s(eta)) = y eta - softplus(eta)``.
    """
    return y * eta - np.logaddexp(0.0, eta)


def laplace_log_prior(theta, b):
    theta = np.asarray(theta, dtype=float)
    return LaplacePrior(b, theta.shape[-1]).logpdf(theta)


class LogisticModel(LinearPredictorModel):
    """Bayesian logistic regression.

    ``prior`` may be a :class:`~loomix.priors.GaussianPrior`, a
    :class:`~loomix.priors.LaplacePrior`, or one of the strings
    ``"laplace"`` (scale ``sqrt(50/p)``) / ``"gaussian"`` (variance ``100/p``).
    """

    def __init__(self, data: Dataset, prior="laplace"):
        y = data.y
        if not np.all((y == 0) | (y == 1)):
            raise DataError("logistic model needs binary responses in {0, 1}")
        p = data.p
        if prior == "laplace":
            prior = LaplacePrior(default_laplace_scale(p), p)
        elif prior == "gaussian":
            prior = GaussianPrior(0.0, 100.0 / p, dim=p)
        elif not isinstance(prior, (GaussianPrior, LaplacePrior)):
            raise InputError(f"unsupported prior {prior!r}")
        if prior.dim != p:
            raise InputError("prior dimension does not match the number of covariates")
        super().__init__(data, prior)

    def _pointwise(self, eta):
        y = self._y
        return logistic_loglik(y, eta), y - expit(eta)


class GaussianUnknownNoiseModel(PointwiseModel):
    """Linear regression with unknown noise and an inverse-gamma prior on ``sigma2``.

    The parameter vector is ``(beta_1, ..., beta_p, log sigma2)``; the
    log-Jacobian of the transform is part of :meth:`log_prior`.
    """

    def __init__(self, data: Dataset, prior_theta="laplace", shape: float = 4.0, rate: float = 6.0):
        if shape <= 0 or rate <= 0:
            raise InputError("inverse-gamma shape and rate must be positive")
        p = data.p
        if prior_theta == "laplace":
            prior_theta = LaplacePrior(default_laplace_scale(p), p)
        elif prior_theta == "gaussian":
            prior_theta = GaussianPrior(0.0, 100.0 / p, dim=p)
        self.data = data
        self.prior_theta = prior_theta
        self.shape = float(shape)
        self.rate = float(rate)
        self._X = data.X
        self._y = data.y
        self.prior = self

    proper = True

    @property
    def n_obs(self) -> int:
        return self.data.n

    @property
    def dim(self) -> int:
        return self.data.p + 1

    def _log_prior_lam(self, lam):
        a, b = self.shape, self.rate
        # InvGamma(a, b) density of exp(lam) times the Jacobian exp(lam)
        return a * math.log(b) - gammaln(a) - a * lam - b * np.exp(-lam)

    def log_prior(self, theta):
        theta = np.asarray(theta, dtype=float)
        return self.prior_theta.logpdf(theta[..., :-1]) + self._log_prior_lam(theta[..., -1])

    def grad_log_prior(self, theta):
        theta = np.asarray(theta, dtype=float)
        g = np.empty_like(theta)
        g[..., :-1] = self.prior_theta.grad(theta[..., :-1])
        g[..., -1] = -self.shape + self.rate * np.exp(-theta[..., -1])
        return g

    # PointwiseModel.sample_prior goes through self.prior.sample
    def sample(self, rng, size, dim=None):
        beta = self.prior_theta.sample(rng, size, self.data.p)
        sigma2 = 1.0 / rng.gamma(self.shape, 1.0 / self.rate, size=size)
        return np.column_stack([beta, np.log(sigma2)])

    def loglik_and_vjp(self, theta):
        theta = np.asarray(theta, dtype=float)
        beta, lam = theta[..., :-1], theta[..., -1:]
        prec = np.exp(-lam)
        r = self._y - beta @ self._X.T
        ell = -0.5 * (_LOG_2PI + lam) - 0.5 * r * r * prec
        d_eta = r * prec
        d_lam = -0.5 + 0.5 * r * r * prec
        X = self._X

        def vjp(coef):
            gb = (coef * d_eta) @ X
            gl = np.sum(coef * d_lam, axis=-1, keepdims=True)
            return np.concatenate([gb, gl], axis=-1)

        return ell, vjp
