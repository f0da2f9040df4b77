"""Pareto-smoothed importance sampling for the posterior estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import InputError
from .estimators import EstimateRecord, log_is_ess

__all__ = ["GpdFit", "gpd_fit", "gpd_quantile", "psis_smooth", "psis_estimate", "khat_fraction"]

#: k-hat reported when no tail could be fitted (degenerate or too few weights)
NO_FIT = float("nan")
KHAT_THRESHOLD = 0.7


@dataclass(frozen=True)
class GpdFit:
    k: float
    sigma: float
    n_tail: int


def gpd_fit(tail, prior_strength: float = 10.0) -> GpdFit | None:
    """Empirical-Bayes fit of the generalized Pareto shape and scale.

    Zhang & Stephens (2009) profile posterior over ``b = -k / sigma``,
    evaluated on ``30 + sqrt(n)`` quadrature nodes, then the shape is shrunk
    toward 0.5 with weight ``prior_strength / (n + prior_strength)``.

    ``tail`` holds positive exceedances over a threshold. Returns ``None``
    when fewer than five values are given.
    """
    x = np.sort(np.asarray(tail, dtype=float))
    n = x.size
    if n < 5:
        return None
    if x[0] < 0:
        raise InputError("exceedances must be nonnegative")
    m = 30 + int(math.sqrt(n))
    b = 1.0 - np.sqrt(m / (np.arange(1, m + 1) - 0.5))
    b = b / (3.0 * x[int(n / 4 + 0.5) - 1]) + 1.0 / x[-1]
    k = np.log1p(-b[:, None] * x).mean(axis=1)
    len_scale = n * (np.log(-b / k) - k - 1.0)
    w = np.exp(len_scale - logsumexp(len_scale))
    b_post = float(np.sum(b * w))
    k_post = float(np.log1p(-b_post * x).mean())
    sigma = -k_post / b_post
    k_hat = (n * k_post + prior_strength * 0.5) / (n + prior_strength)
    return GpdFit(float(k_hat), float(sigma), n)


def gpd_quantile(p, k, sigma):
    p = np.asarray(p, dtype=float)
    if abs(k) < 1e-12:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def psis_smooth(log_weights):
    """Replace the largest ``M = ceil(min(0.2 S, 3 sqrt(S)))`` weights by GPD order statistics.

    Returns ``(smoothed_log_weights, khat)``. Smoothed weights never exceed
    the largest raw weight. Equal tail weights are returned untouched with
    ``khat = NO_FIT``.
    """
    lw = np.array(log_weights, dtype=float)
    S = lw.size
    if S < 25:
        raise InputError("PSIS needs at least 25 weights")
    lw_max = lw.max()
    if not np.isfinite(lw_max):
        return lw, NO_FIT
    lw = lw - lw_max
    M = int(math.ceil(min(0.2 * S, 3.0 * math.sqrt(S))))
    order = np.argsort(lw, kind="stable")
    tail_idx = order[-M:]
    tail = lw[tail_idx]
    cutoff = max(lw[order[-M - 1]], math.log(np.finfo(float).tiny))
    if np.ptp(tail) == 0:
        return lw + lw_max, NO_FIT
    exceed = np.exp(tail) - math.exp(cutoff)
    fit = gpd_fit(exceed)
    if fit is None or not np.isfinite(fit.k):
        return lw + lw_max, NO_FIT
    q = gpd_quantile((np.arange(M) + 0.5) / M, fit.k, fit.sigma)
    with np.errstate(divide="ignore"):
        smoothed = np.log(q + math.exp(cutoff))
    lw[tail_idx] = np.minimum(smoothed, 0.0)
    return lw + lw_max, fit.k


def psis_estimate(samples) -> list[EstimateRecord]:
    """Posterior estimator with Pareto-smoothed weights ``w_is ∝ 1 / p(y_i | theta_s)``."""
    L = samples.loglik if hasattr(samples, "loglik") else np.asarray(samples, dtype=float)
    recs = []
    for i, row in enumerate(L):
        if np.isneginf(row).any():
            recs.append(EstimateRecord(i, -math.inf, "psis", 1.0, NO_FIT, flags=("degenerate-weight",)))
            continue
        lw, k = psis_smooth(-row)
        v = float(logsumexp(lw + row) - logsumexp(lw))
        recs.append(EstimateRecord(i, v, "psis", float(log_is_ess(lw)), k))
    return recs


def khat_fraction(records, threshold: float = KHAT_THRESHOLD) -> float:
    """Share of records whose k-hat exceeds ``threshold`` (unfitted tails count as fine)."""
    ks = np.array([np.nan if r.khat is None else r.khat for r in records])
    return float(np.mean(ks > threshold)) if ks.size else 0.0
