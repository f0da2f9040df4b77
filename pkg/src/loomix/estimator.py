"""scikit-learn style front end."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted, check_X_y

from .conjugate import (
    GaussianLinearModel,
    mixture_exact,
    sample_bronze_iid,
    sample_mixture_iid,
    sample_posterior_iid,
)
from .data import Dataset
from .errors import InputError
from .estimators import bronze_estimate, mixture_estimate, posterior_estimate, psi_plugin
from .glm import GaussianUnknownNoiseModel, LogisticModel
from .hmc import HmcConfig, run_hmc
from .model import TargetDensity
from .priors import FLAT
from .psis import khat_fraction, psis_estimate

__all__ = ["LooCV"]

_ESTIMATORS = {
    "posterior": posterior_estimate,
    "psis": psis_estimate,
    "mixture": mixture_estimate,
    "bronze": bronze_estimate,
}


class LooCV(BaseEstimator):
    """Estimate ``log p(y_i | y_{-i})`` and the criterion ``psi`` for a dataset.

    Parameters
    ----------
    model : {"gaussian-conjugate", "logistic", "gaussian-unknown-noise"}
        Likelihood and prior family.
    method : {"mixture", "posterior", "psis", "bronze"}
        Estimator. ``posterior`` and ``psis`` both sample the posterior;
        the others sample their own proposal.
    n_samples : int
        Total draws ``S``. MCMC backends split them across ``n_chains``.
    sigma2 : float
        Known noise variance (conjugate model only).
    prior_var : float or "flat"
        Isotropic prior variance (conjugate model only).
    prior : {"laplace", "gaussian"}
        Coefficient prior for the other models.
    warmup, n_chains : int
        HMC settings for non-conjugate models.
    random_state : int or None

    Attributes
    ----------
    log_mu_ : ndarray of shape (n_samples_fit,)
        Estimated ``log p(y_i | y_{-i})``.
    psi_ : float
        ``sum(log_mu_)``.
    records_ : list of EstimateRecord
    khat_frac_ : float or None
        Share of Pareto ``k`` above 0.7 (``psis`` only).
    diagnostics_ : ChainDiagnostics or None
    """

    def __init__(
        self,
        model="gaussian-conjugate",
        method="mixture",
        n_samples=4000,
        sigma2=1.0,
        prior_var=1.0,
        prior="laplace",
        warmup=1000,
        n_chains=4,
        random_state=None,
    ):
        self.model = model
        self.method = method
        self.n_samples = n_samples
        self.sigma2 = sigma2
        self.prior_var = prior_var
        self.prior = prior
        self.warmup = warmup
        self.n_chains = n_chains
        self.random_state = random_state

    def _build(self, X, y):
        data = Dataset(y, X)
        if self.model == "gaussian-conjugate":
            Sigma = FLAT if self.prior_var == "flat" else float(self.prior_var)
            return GaussianLinearModel(data, self.sigma2, 0.0, Sigma)
        if self.model == "logistic":
            return LogisticModel(data, self.prior)
        if self.model == "gaussian-unknown-noise":
            return GaussianUnknownNoiseModel(data, self.prior)
        raise InputError(f"unknown model {self.model!r}")

    def fit(self, X, y):
        if self.method not in _ESTIMATORS:
            raise InputError(f"method must be one of {sorted(_ESTIMATORS)}")
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        m = self._build(X, y)
        seed = self.random_state
        self.diagnostics_ = None
        if isinstance(m, GaussianLinearModel):
            if self.method == "mixture":
                samples = sample_mixture_iid(mixture_exact(m), self.n_samples, seed)
            elif self.method == "bronze":
                samples = sample_bronze_iid(m, self.n_samples, seed)
            else:
                samples = sample_posterior_iid(m, self.n_samples, seed)
        else:
            kind = {"psis": "posterior"}.get(self.method, self.method)
            target = getattr(TargetDensity, kind)(m)
            draws = max(2, self.n_samples // self.n_chains)
            cfg = HmcConfig(
                warmup=self.warmup,
                draws=draws,
                n_chains=self.n_chains,
                seed=0 if seed is None else int(seed),
            )
            samples, self.diagnostics_ = run_hmc(target, cfg)
        self.records_ = _ESTIMATORS[self.method](samples)
        self.log_mu_ = np.array([r.log_mu_hat for r in self.records_])
        self.psi_ = psi_plugin(self.records_).value
        self.khat_frac_ = khat_fraction(self.records_) if self.method == "psis" else None
        self.n_features_in_ = X.shape[1]
        return self

    def score(self, X, y):
        """Estimated ``psi`` of ``(X, y)``, refitting a copy on that data."""
        check_is_fitted(self, "psi_")
        return self.__class__(**self.get_params()).fit(X, y).psi_
