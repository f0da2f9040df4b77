"""Rank-normalized split R-hat and bulk effective sample size."""

from __future__ import annotations

import numpy as np
from scipy import stats

from .errors import InputError

__all__ = ["split_rhat", "ess_bulk", "ess_mean", "DEGENERATE"]

#: returned for chains with zero variance, where both statistics are undefined
DEGENERATE = float("nan")


def _as_chains(chains):
    """Coerce to ``(n_chains, n_draws, n_dims)``."""
    a = np.asarray(chains, dtype=float)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise InputError("chains must have shape (n_chains, n_draws[, n_dims])")
    c, d, _ = a.shape
    if c < 1 or d < 8:
        raise InputError("need at least 8 draws per chain (4 per split segment)")
    return a


def _split(a):
    half = a.shape[1] // 2
    return np.concatenate([a[:, :half], a[:, -half:]], axis=0)


def _z_scale(a):
    rank = stats.rankdata(a, method="average").reshape(a.shape)
    return stats.norm.ppf((rank - 0.375) / (a.size + 0.25))


def _rhat(a):
    _, n = a.shape
    chain_mean = a.mean(axis=1)
    W = a.var(axis=1, ddof=1).mean()
    B = n * chain_mean.var(ddof=1)
    return float(np.sqrt(((n - 1) / n * W + B / n) / W))


def _autocov(x):
    n = x.size
    m = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x - x.mean(), n=m)
    acov = np.fft.irfft(f * np.conjugate(f), n=m)[:n]
    return acov / n


def _ess(a):
    c, n = a.shape
    acov = np.array([_autocov(a[k]) for k in range(c)])
    chain_mean = a.mean(axis=1)
    mean_var = acov[:, 0].mean() * n / (n - 1.0)
    var_plus = mean_var * (n - 1.0) / n
    if c > 1:
        var_plus += chain_mean.var(ddof=1)
    rho = np.zeros(n)
    rho[0] = 1.0
    even, odd = 1.0, 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[1] = odd
    # Geyer's initial positive sequence
    t = 1
    while t < n - 2 and even + odd >= 0.0:
        even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        rho[t + 1] = even
        if even + odd >= 0:
            rho[t + 2] = odd
        t += 2
    max_t = t
    # ... made monotone
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = rho[t + 2] = (rho[t - 1] + rho[t]) / 2.0
        t += 2
    tau = -1.0 + 2.0 * rho[:max_t].sum() + rho[max_t + 1 : max_t + 2].sum()
    return min(c * n / tau, float(c * n))


def _per_dim(chains, fn):
    a = _as_chains(chains)
    out = np.empty(a.shape[2])
    for k in range(a.shape[2]):
        x = a[:, :, k]
        out[k] = DEGENERATE if np.ptp(x) == 0 or not np.all(np.isfinite(x)) else fn(x)
    return out


def split_rhat(chains) -> np.ndarray:
    """Rank-normalized split R-hat (maximum of bulk and folded-tail versions) per dimension.

    ``chains`` has shape ``(n_chains, n_draws)`` or ``(n_chains, n_draws, n_dims)``.
    Constant inputs give :data:`DEGENERATE`.
    """

    def one(x):
        bulk = _rhat(_z_scale(_split(x)))
        folded = np.abs(x - np.median(x))
        if np.ptp(folded) == 0:
            return bulk
        return max(bulk, _rhat(_z_scale(_split(folded))))

    return _per_dim(chains, one)


def ess_bulk(chains) -> np.ndarray:
    """Bulk effective sample size on rank-normalized split chains, capped at the draw count."""
    return _per_dim(chains, lambda x: _ess(_z_scale(_split(x))))


def ess_mean(chains) -> np.ndarray:
    """Effective sample size for the mean of the raw values (no rank transform).

    This is the relevant ESS for Monte Carlo standard errors of averages.
    """
    return _per_dim(chains, lambda x: _ess(_split(x)))
