"""Monte Carlo estimators of the leave-one-out predictive densities ``p(y_i | y_{-i})``.

Every estimator works on the ``n x S`` log-likelihood matrix cached in a
:class:`~loomix.model.WeightedSampleSet` and returns log-scale estimates.
The ``*_log_mu`` functions are the vectorized kernels; the ``*_estimate``
wrappers add diagnostics and package one :class:`EstimateRecord` per
observation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import InputError

__all__ = [
    "EstimateRecord",
    "PsiEstimate",
    "loo_log_mu",
    "posterior_log_mu",
    "mixture_log_mu",
    "bronze_log_mu",
    "log_is_ess",
    "is_ess",
    "loo_estimate",
    "posterior_estimate",
    "mixture_estimate",
    "bronze_estimate",
    "gold_estimate",
    "silver_estimate",
    "psi_plugin",
    "empirical_av",
]

METHODS = ("loo", "posterior", "mixture", "psis", "bronze", "gold", "silver")


@dataclass(frozen=True)
class EstimateRecord:
    """Estimate of ``log p(y_i | y_{-i})`` for one observation."""

    i: int
    log_mu_hat: float
    method: str
    is_ess: float
    khat: float | None = None
    empirical_av: float | None = None
    pi_hat: float | None = None
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class PsiEstimate:
    """Estimate of the criterion ``sum_i log p(y_i | y_{-i})``."""

    value: float
    method: str
    per_obs: list = field(default_factory=list)
    flags: tuple[str, ...] = ()
    info: dict = field(default_factory=dict)


def _loglik(samples):
    return samples.loglik if hasattr(samples, "loglik") else np.asarray(samples, dtype=float)


def log_is_ess(log_w, axis=-1):
    """``(sum w)^2 / sum w^2`` computed from log-weights."""
    log_w = np.asarray(log_w, dtype=float)
    with np.errstate(invalid="ignore"):
        return np.exp(2.0 * logsumexp(log_w, axis=axis) - logsumexp(2.0 * log_w, axis=axis))


def is_ess(weights) -> float:
    """Importance-sampling effective sample size of nonnegative weights."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.any(w > 0):
        raise InputError("weights must be nonnegative with at least one positive entry")
    with np.errstate(divide="ignore"):
        return float(log_is_ess(np.log(w)))


def loo_log_mu(loglik_row) -> float:
    """Sample average of ``p(y_i | theta_s)`` over draws from the LOO posterior."""
    row = np.asarray(loglik_row, dtype=float)
    return float(logsumexp(row) - math.log(row.size))


def posterior_log_mu(loglik) -> np.ndarray:
    """Harmonic-mean estimator ``log S - LSE_s(-ell_is)`` for every observation.

    Rows containing ``-inf`` get ``-inf`` (an infinite importance weight).
    """
    L = _loglik(loglik)
    S = L.shape[1]
    with np.errstate(over="ignore"):
        out = math.log(S) - logsumexp(-L, axis=1)
    return np.where(np.isneginf(L).any(axis=1), -np.inf, out)


def mixture_log_mu(loglik, alpha=None, return_pi: bool = False):
    """Mixture estimator at ``Theta(nS)`` total cost.

    ``z_s = LSE_i(-ell_is + log alpha_i)``, log-weights
    ``w_is = -ell_is + log alpha_i - z_s`` and
    ``log mu_i = LSE_s(-z_s) - LSE_s(w_is)``; the ``log alpha_i`` shift
    cancels between numerator and denominator.
    """
    L = _loglik(loglik)
    n, S = L.shape
    log_alpha = np.zeros(n) if alpha is None else np.log(np.asarray(alpha, dtype=float))
    with np.errstate(invalid="ignore", over="ignore"):
        A = log_alpha[:, None] - L
        z = logsumexp(A, axis=0)  # (S,)
        W = A - z
        lse_w = logsumexp(W, axis=1)
        # numerator sum_s p_i w_is = sum_s alpha_i exp(-z_s)
        log_mu = logsumexp(-z) + log_alpha - lse_w
    dead = np.isneginf(L).any(axis=1)
    log_mu = np.where(dead, -np.inf, log_mu)
    if return_pi:
        return log_mu, np.exp(lse_w - math.log(S)), W
    return log_mu


def bronze_log_mu(loglik) -> np.ndarray:
    """Self-normalized IS from the tempered posterior to each LOO posterior.

    Log-weights are ``(1/n) sum_j ell_js - ell_is``.
    """
    L = _loglik(loglik)
    m = L.mean(axis=0)  # (S,)
    with np.errstate(invalid="ignore"):
        out = logsumexp(m) - logsumexp(m[None, :] - L, axis=1)
    return np.where(np.isneginf(L).any(axis=1), -np.inf, out)


def _records(log_mu, method, ess, flags_dead=None, pi_hat=None):
    recs = []
    for i, v in enumerate(log_mu):
        flags = ()
        if flags_dead is not None and flags_dead[i]:
            flags = ("degenerate-weight",)
        recs.append(
            EstimateRecord(
                i=i,
                log_mu_hat=float(v),
                method=method,
                is_ess=float(ess[i]) if np.isfinite(ess[i]) else 1.0,
                pi_hat=None if pi_hat is None else float(pi_hat[i]),
                flags=flags,
            )
        )
    return recs


def loo_estimate(samples_per_i) -> list[EstimateRecord]:
    """Brute-force estimator: sample set ``i`` must come from ``p(theta | y_{-i})``."""
    recs = []
    for i, s in enumerate(samples_per_i):
        row = _loglik(s)[i]
        v = loo_log_mu(row)
        flags = ()
        if np.isneginf(v):
            warnings.warn(f"observation {i}: every likelihood term is zero", RuntimeWarning)
            flags = ("zero-likelihood",)
        recs.append(EstimateRecord(i, v, "loo", float(row.size), flags=flags))
    return recs


def posterior_estimate(samples) -> list[EstimateRecord]:
    L = _loglik(samples)
    dead = np.isneginf(L).any(axis=1)
    with np.errstate(over="ignore", invalid="ignore"):
        ess = log_is_ess(-L, axis=1)
    return _records(posterior_log_mu(L), "posterior", ess, dead)


def mixture_estimate(samples, alpha=None) -> list[EstimateRecord]:
    """Mixture estimator; records carry the implied component probability ``pi_hat``."""
    L = _loglik(samples)
    log_mu, pi_hat, W = mixture_log_mu(L, alpha, return_pi=True)
    ess = log_is_ess(W, axis=1)
    return _records(log_mu, "mixture", ess, np.isneginf(L).any(axis=1), pi_hat)


def bronze_estimate(samples) -> list[EstimateRecord]:
    L = _loglik(samples)
    m = L.mean(axis=0)
    with np.errstate(invalid="ignore"):
        ess = log_is_ess(m[None, :] - L, axis=1)
    return _records(bronze_log_mu(L), "bronze", ess, np.isneginf(L).any(axis=1))


def psi_plugin(records) -> PsiEstimate:
    """Plug-in criterion ``sum_i log mu_hat_i``."""
    records = list(records)
    if not records:
        raise InputError("no records")
    methods = {r.method for r in records}
    if len(methods) != 1:
        raise InputError("records mix several methods")
    vals = np.array([r.log_mu_hat for r in records])
    flags = ("infinite-term",) if np.isneginf(vals).any() else ()
    return PsiEstimate(float(vals.sum()), methods.pop(), records, flags)


def _subset(n, K, rng):
    if not 1 <= K <= n:
        raise InputError(f"K must lie in [1, {n}], got {K}")
    return np.sort(rng.choice(n, size=K, replace=False))


def gold_estimate(exact_log_mu, K: int, seed=None) -> PsiEstimate:
    """``(n/K) sum_{i in I} log mu_i`` over a uniform size-``K`` subset ``I``.

    Takes exact values on the log scale.
    """
    lm = np.asarray(exact_log_mu, dtype=float)
    n = lm.size
    idx = _subset(n, K, np.random.default_rng(seed))
    return PsiEstimate(float(n / K * lm[idx].sum()), "gold", info={"subset": idx.tolist()})


def silver_estimate(model, K: int, total_samples: int, seed=None, hmc_config=None) -> PsiEstimate:
    """Gold estimator with brute-force LOO estimates on a random subset.

    Each selected observation gets ``floor(total_samples / K)`` draws
    (warmup included for MCMC backends); the remainder is discarded and
    reported in ``info``.
    """
    from .conjugate import GaussianLinearModel, sample_loo_iid
    from .hmc import HmcConfig, run_hmc_batch
    from .model import TargetDensity

    n = model.n_obs
    if total_samples < 2 * K:
        raise InputError("total_samples must be at least 2K")
    ss = np.random.SeedSequence(seed)
    rng = np.random.default_rng(ss.spawn(1)[0])
    idx = _subset(n, K, rng)
    per = total_samples // K
    child = ss.spawn(K + 1)[1:]
    if isinstance(model, GaussianLinearModel):
        sets = [sample_loo_iid(model, int(i), per, np.random.default_rng(child[k])) for k, i in enumerate(idx)]
    else:
        base = hmc_config or HmcConfig()
        warm = max(100, per // 2)
        if per - warm < 2:
            raise InputError("per-observation budget too small for MCMC (need > 101 draws)")
        cfg = HmcConfig(
            warmup=warm,
            draws=per - warm,
            n_chains=1,
            seed=0,
            target_accept=base.target_accept,
            n_leapfrog=base.n_leapfrog,
            init=base.init,
        )
        seeds = [int(c.generate_state(1)[0]) for c in child]
        runs = run_hmc_batch([TargetDensity.loo(model, int(i)) for i in idx], cfg, seeds)
        sets = [s for s, _ in runs]
    recs = [
        EstimateRecord(int(i), loo_log_mu(s.loglik[i]), "silver", float(s.S)) for i, s in zip(idx, sets)
    ]
    value = n / K * sum(r.log_mu_hat for r in recs)
    return PsiEstimate(
        float(value),
        "silver",
        recs,
        info={"subset": idx.tolist(), "per_index": per, "discarded": total_samples - per * K},
    )


def empirical_av(replicate_log_estimates, S: int, true_log_mu=None, scale: str = "log") -> float:
    """``S`` times the variance of replicate estimates.

    ``scale="log"`` uses the log-estimates (delta-method form); ``"ratio"``
    uses ``mu_hat / mu`` and needs ``true_log_mu``. Non-finite replicates
    are dropped with a warning giving their count.
    """
    x = np.asarray(replicate_log_estimates, dtype=float)
    ok = np.isfinite(x)
    if (~ok).any():
        warnings.warn(f"excluded {int((~ok).sum())} non-finite replicates", RuntimeWarning)
    x = x[ok]
    if x.size < 10:
        raise InputError("need at least 10 finite replicates")
    if scale == "ratio":
        if true_log_mu is None:
            raise InputError("scale='ratio' needs true_log_mu")
        x = np.exp(x - true_log_mu)
    elif scale != "log":
        raise InputError(f"unknown scale {scale!r}")
    if np.ptp(x) == 0:
        return 0.0
    return float(S * x.var(ddof=1))
