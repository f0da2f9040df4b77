"""Pointwise model abstraction, target densities and cached sample sets.

A :class:`PointwiseModel` factorizes as ``p(theta) * prod_i p(y_i | theta)``.
Every sampler and estimator in the package consumes models through this
interface. All evaluation methods accept either a single parameter vector of
shape ``(d,)`` or a batch ``(..., d)``.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import InputError

__all__ = [
    "PointwiseModel",
    "LinearPredictorModel",
    "TargetDensity",
    "WeightedSampleSet",
    "eval_log_target",
    "grad_log_target",
    "make_sample_set",
]

TARGET_KINDS = ("posterior", "mixture", "bronze", "loo")


class PointwiseModel(ABC):
    """Conditionally independent likelihood terms plus a prior."""

    prior = None

    @property
    @abstractmethod
    def n_obs(self) -> int: ...

    @property
    @abstractmethod
    def dim(self) -> int: ...

    @abstractmethod
    def log_prior(self, theta): ...

    @abstractmethod
    def grad_log_prior(self, theta): ...

    @abstractmethod
    def loglik_and_vjp(self, theta) -> tuple[np.ndarray, Callable]:
        """Return ``ell`` with shape ``(..., n)`` and a function mapping
        coefficients ``c`` of the same shape to ``sum_i c_i grad ell_i``."""

    def log_lik_terms(self, theta) -> np.ndarray:
        return self.loglik_and_vjp(theta)[0]

    def log_lik_term(self, i: int, theta) -> float:
        return self.log_lik_terms(theta)[..., i]

    def grad_log_lik_term(self, i: int, theta) -> np.ndarray:
        ell, vjp = self.loglik_and_vjp(theta)
        coef = np.zeros_like(ell)
        coef[..., i] = 1.0
        return vjp(coef)

    def loglik_matrix(self, thetas) -> np.ndarray:
        """The ``n x S`` matrix with entries ``log p(y_i | theta_s)``."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        return np.ascontiguousarray(self.log_lik_terms(thetas).T)

    def sample_prior(self, rng, size: int) -> np.ndarray:
        return self.prior.sample(rng, size, self.dim)

    @property
    def prior_is_proper(self) -> bool:
        return bool(getattr(self.prior, "proper", False))


class LinearPredictorModel(PointwiseModel):
    """Likelihood terms that depend on ``theta`` only through ``x_i^T theta``.

    Subclasses implement :meth:`_pointwise`, returning the log-likelihood and
    its derivative with respect to the linear predictor.
    """

    def __init__(self, data, prior):
        self.data = data
        self.prior = prior
        self._X = data.X
        self._y = data.y

    @property
    def n_obs(self) -> int:
        return self.data.n

    @property
    def dim(self) -> int:
        return self.data.p

    def log_prior(self, theta):
        return self.prior.logpdf(theta)

    def grad_log_prior(self, theta):
        return self.prior.grad(theta)

    @abstractmethod
    def _pointwise(self, eta) -> tuple[np.ndarray, np.ndarray]: ...

    def loglik_and_vjp(self, theta):
        theta = np.asarray(theta, dtype=float)
        eta = theta @ self._X.T
        ell, dell = self._pointwise(eta)
        X = self._X

        def vjp(coef):
            return (coef * dell) @ X

        return ell, vjp


def _check_theta(theta, dim):
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1:] != (dim,):
        raise InputError(f"parameter vector must have length {dim}, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise InputError("parameter vector contains non-finite entries")
    return theta


@dataclass(frozen=True, eq=False)
class TargetDensity:
    """An unnormalized log-density built from a :class:`PointwiseModel`.

    ``kind`` is one of ``"posterior"``, ``"mixture"`` (the alpha-weighted
    mixture of leave-one-out posteriors), ``"bronze"`` (likelihood tempered
    by ``(n-1)/n``) or ``"loo"`` (posterior with observation ``index``
    removed).
    """

    model: PointwiseModel
    kind: str = "posterior"
    alpha: np.ndarray | None = None
    index: int | None = None
    log_alpha: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise InputError(f"unknown target kind {self.kind!r}")
        n = self.model.n_obs
        if self.kind == "mixture":
            alpha = np.ones(n) if self.alpha is None else np.asarray(self.alpha, dtype=float)
            if alpha.shape != (n,):
                raise InputError(f"alpha must have length {n}")
            if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
                raise InputError("alpha entries must be finite and strictly positive")
            object.__setattr__(self, "alpha", alpha)
            object.__setattr__(self, "log_alpha", np.log(alpha))
        else:
            object.__setattr__(self, "log_alpha", None)
        if self.kind == "loo":
            if self.index is None or not 0 <= self.index < n:
                raise InputError("loo target needs an observation index in [0, n)")

    @classmethod
    def posterior(cls, model):
        return cls(model, "posterior")

    @classmethod
    def mixture(cls, model, alpha=None):
        return cls(model, "mixture", alpha=alpha)

    @classmethod
    def bronze(cls, model):
        return cls(model, "bronze")

    @classmethod
    def loo(cls, model, index: int):
        return cls(model, "loo", index=index)

    @property
    def tag(self) -> str:
        return f"loo:{self.index}" if self.kind == "loo" else self.kind

    @property
    def dim(self) -> int:
        return self.model.dim

    def _coefficients(self, ell):
        """Per-term gradient coefficients and the log-likelihood part of the density."""
        n = ell.shape[-1]
        if self.kind == "posterior":
            return np.ones_like(ell), np.sum(ell, axis=-1)
        if self.kind == "bronze":
            r = (n - 1) / n
            return np.full_like(ell, r), r * np.sum(ell, axis=-1)
        if self.kind == "loo":
            coef = np.ones_like(ell)
            coef[..., self.index] = 0.0
            return coef, np.sum(np.where(coef > 0, ell, 0.0), axis=-1)
        dead = np.isneginf(ell)
        if not dead.any():
            # log p(theta) + sum_i ell_i + LSE_i(-ell_i + log alpha_i)
            a = self.log_alpha - ell
            amax = a.max(axis=-1, keepdims=True)
            e = np.exp(a - amax)
            tot = e.sum(axis=-1, keepdims=True)
            lse = (amax + np.log(tot))[..., 0]
            return 1.0 - e / tot, np.sum(ell, axis=-1) + lse
        # with one impossible term only that mixture component survives
        ndead = dead.sum(axis=-1)
        safe = np.where(dead, 0.0, ell)
        a = -safe + self.log_alpha
        finite_sum = np.sum(safe, axis=-1)
        value = np.where(
            ndead == 0,
            finite_sum + logsumexp(a, axis=-1),
            np.where(ndead == 1, finite_sum + np.sum(np.where(dead, self.log_alpha, 0.0), axis=-1), -np.inf),
        )
        coef = np.where((ndead == 0)[..., None], 1.0 - softmax(a, axis=-1), np.where(dead, 0.0, 1.0))
        coef = np.where((ndead >= 2)[..., None], 0.0, coef)
        return coef, value

    def logp_and_grad(self, theta):
        """Unnormalized log-density and its gradient in one pass."""
        return self._logp_and_grad(_check_theta(theta, self.model.dim))

    def _logp_and_grad(self, theta):
        ell, vjp = self.model.loglik_and_vjp(theta)
        coef, value = self._coefficients(ell)
        logp = self.model.log_prior(theta) + value
        grad = self.model.grad_log_prior(theta) + vjp(coef)
        if np.ndim(logp) == 0:
            logp = float(logp)
        return logp, grad

    def log_density(self, theta):
        theta = _check_theta(theta, self.model.dim)
        ell = self.model.log_lik_terms(theta)
        _, value = self._coefficients(ell)
        out = self.model.log_prior(theta) + value
        return float(out) if np.ndim(out) == 0 else out

    def grad(self, theta):
        return self.logp_and_grad(theta)[1]


def eval_log_target(t: TargetDensity, theta) -> float:
    return t.log_density(theta)


def grad_log_target(t: TargetDensity, theta) -> np.ndarray:
    return t.grad(theta)


@dataclass(frozen=True, eq=False)
class WeightedSampleSet:
    """Parameter draws with the model's ``n x S`` log-likelihood matrix cached."""

    thetas: np.ndarray
    loglik: np.ndarray
    source: str
    seed: object = None
    component: np.ndarray | None = None

    def __post_init__(self):
        thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        loglik = np.asarray(self.loglik, dtype=float)
        if thetas.shape[0] < 2:
            raise InputError("a sample set needs S >= 2 draws")
        if loglik.ndim != 2 or loglik.shape[1] != thetas.shape[0]:
            raise InputError("loglik must be n x S with S matching the number of draws")
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "loglik", loglik)

    @property
    def S(self) -> int:
        return self.thetas.shape[0]

    @property
    def n(self) -> int:
        return self.loglik.shape[0]


def make_sample_set(model: PointwiseModel, thetas, source: str, seed=None, component=None):
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    return WeightedSampleSet(thetas, model.loglik_matrix(thetas), source, seed, component)
