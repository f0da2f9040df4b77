"""Hamiltonian Monte Carlo with jittered trajectory length.

Chains advance in lockstep so that every leapfrog step is one batched
density/gradient evaluation; each chain owns its RNG stream, step size,
dual-averaging state and diagonal inverse metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import ess_bulk, split_rhat
from .errors import InputError, NumericalError
from .model import TargetDensity, WeightedSampleSet

__all__ = ["HmcConfig", "ChainDiagnostics", "run_hmc", "run_hmc_batch", "leapfrog"]


@dataclass(frozen=True)
class HmcConfig:
    """Sampler settings.

    ``n_leapfrog`` is either a fixed step count or an inclusive ``(lo, hi)``
    range drawn uniformly per iteration. ``init`` is ``"prior"``, ``"zero"``
    or an array of shape ``(d,)`` / ``(n_chains, d)``.
    """

    warmup: int = 1000
    draws: int = 1000
    n_chains: int = 4
    seed: int = 0
    target_accept: float = 0.8
    n_leapfrog: int | tuple[int, int] = (16, 48)
    init: object = "prior"
    max_energy_error: float = 1000.0

    def __post_init__(self):
        if self.warmup < 100:
            raise InputError("warmup must be at least 100")
        if self.draws < 2:
            raise InputError("draws must be at least 2")
        if self.n_chains < 1:
            raise InputError("n_chains must be positive")
        if not 0.5 < self.target_accept <= 0.99:
            raise InputError("target_accept must lie in (0.5, 0.99]")
        lo, hi = self.leapfrog_range
        if lo < 1 or hi < lo:
            raise InputError("invalid n_leapfrog")

    @property
    def leapfrog_range(self) -> tuple[int, int]:
        if isinstance(self.n_leapfrog, (int, np.integer)):
            return int(self.n_leapfrog), int(self.n_leapfrog)
        lo, hi = self.n_leapfrog
        return int(lo), int(hi)


@dataclass
class ChainDiagnostics:
    split_rhat: np.ndarray
    ess_bulk: np.ndarray
    accept_rate: float
    divergence_count: int
    warmup_divergences: int = 0
    step_size: np.ndarray = field(default=None, repr=False)
    inv_metric: np.ndarray = field(default=None, repr=False)
    chains: np.ndarray = field(default=None, repr=False)


def leapfrog(target, q, p, eps, inv_mass, n_steps, grad=None):
    """Plain leapfrog integration of one trajectory (single chain, for testing)."""
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    if grad is None:
        _, grad = target.logp_and_grad(q)
    p = p + 0.5 * eps * grad
    for k in range(n_steps):
        q = q + eps * inv_mass * p
        logp, grad = target.logp_and_grad(q)
        p = p + (eps if k < n_steps - 1 else 0.5 * eps) * grad
    return q, p, logp, grad


class _DualAveraging:
    def __init__(self, eps, delta, gamma=0.05, t0=10.0, kappa=0.75):
        self.delta, self.gamma, self.t0, self.kappa = delta, gamma, t0, kappa
        self.restart(eps)

    def restart(self, eps):
        self.mu = np.log(10.0 * eps)
        self.hbar = np.zeros_like(eps)
        self.log_eps_bar = np.zeros_like(eps)
        self.m = 0

    def update(self, accept):
        self.m += 1
        m, t0 = self.m, self.t0
        self.hbar = (1 - 1 / (m + t0)) * self.hbar + (self.delta - accept) / (m + t0)
        log_eps = self.mu - math.sqrt(m) / self.gamma * self.hbar
        eta = m ** (-self.kappa)
        self.log_eps_bar = eta * log_eps + (1 - eta) * self.log_eps_bar
        return np.exp(log_eps)

    @property
    def final(self):
        return np.exp(self.log_eps_bar)


def _windows(warmup):
    """Slow-adaptation window end points: 15% init buffer, 75% doubling windows, 10% term buffer."""
    init = int(0.15 * warmup)
    term = int(0.10 * warmup)
    slow_end = warmup - term
    ends = []
    start, size = init, 25
    while start < slow_end:
        end = start + size
        if end + 2 * size > slow_end:
            end = slow_end
        ends.append(end)
        start, size = end, 2 * size
    return init, ends


def _initial_points(model, init, rngs):
    d = model.dim
    C = len(rngs)
    if isinstance(init, str):
        if init == "zero" or (init == "prior" and not model.prior_is_proper):
            return np.zeros((C, d))
        if init == "prior":
            return np.vstack([model.sample_prior(r, 1) for r in rngs])
        raise InputError(f"unknown init {init!r}")
    q = np.asarray(init, dtype=float)
    return np.broadcast_to(q, (C, d)).copy()


class _Stacked:
    """Several targets on one model evaluated as a single batch, one row per chain.

    Leave-one-out targets are vectorized over their indices; other targets are
    evaluated per contiguous run of rows sharing the same target object.
    """

    def __init__(self, targets, chains_per_target):
        self.model = targets[0].model
        if any(t.model is not self.model for t in targets):
            raise InputError("batched targets must share one model")
        self.dim = self.model.dim
        self.loo_idx = None
        if all(t.kind == "loo" for t in targets):
            self.loo_idx = np.repeat([t.index for t in targets], chains_per_target)
            self.rows = np.arange(self.loo_idx.size)
            return
        self.segments = []
        start = 0
        for t in targets:
            stop = start + chains_per_target
            if self.segments and self.segments[-1][1] is t:
                self.segments[-1] = (slice(self.segments[-1][0].start, stop), t)
            else:
                self.segments.append((slice(start, stop), t))
            start = stop

    def _logp_and_grad(self, q):
        model = self.model
        ell, vjp = model.loglik_and_vjp(q)
        if self.loo_idx is not None:
            coef = np.ones_like(ell)
            coef[self.rows, self.loo_idx] = 0.0
            value = np.sum(np.where(coef > 0, ell, 0.0), axis=-1)
        elif len(self.segments) == 1:
            coef, value = self.segments[0][1]._coefficients(ell)
        else:
            coef = np.empty_like(ell)
            value = np.empty(ell.shape[0])
            for sl, t in self.segments:
                coef[sl], value[sl] = t._coefficients(ell[sl])
        return model.log_prior(q) + value, model.grad_log_prior(q) + vjp(coef)


class _Batch:
    """Batched evaluation that never feeds non-finite positions to the model."""

    def __init__(self, target):
        self.target = target

    def __call__(self, q):
        if np.isfinite(q).all():
            with np.errstate(all="ignore"):
                logp, grad = self.target._logp_and_grad(q)
            if np.isfinite(logp).all() and np.isfinite(grad).all():
                return logp, grad
            ok = np.ones(q.shape[0], dtype=bool)
        else:
            ok = np.all(np.isfinite(q), axis=1)
            with np.errstate(all="ignore"):
                logp, grad = self.target._logp_and_grad(np.where(ok[:, None], q, 0.0))
        logp = np.where(ok & np.isfinite(logp), logp, -np.inf)
        grad = np.where(np.isfinite(grad) & ok[:, None], grad, 0.0)
        return logp, grad


def _trajectory(f, q0, logp0, grad0, eps, inv_mass, n_steps, p0, max_err):
    """Leapfrog all chains; chain c's state is read off after ``n_steps[c]`` steps.

    Chains that finish early keep integrating (results discarded) so every
    step stays a single batched evaluation.
    """
    C = q0.shape[0]
    H0 = -logp0 + 0.5 * np.sum(p0 * p0 * inv_mass, axis=1)
    q_out, p_out = q0.copy(), p0.copy()
    logp_out, grad_out = logp0.copy(), grad0.copy()
    diverged = np.zeros(C, dtype=bool)
    e = eps[:, None]
    step = e * inv_mass
    q = q0.copy()
    p_half = p0 + 0.5 * e * grad0
    for k in range(int(n_steps.max())):
        q += step * p_half
        logp, grad = f(q)
        fin = n_steps == k + 1
        if fin.any():
            q_out[fin] = q[fin]
            p_out[fin] = p_half[fin] + 0.5 * e[fin] * grad[fin]
            logp_out[fin] = logp[fin]
            grad_out[fin] = grad[fin]
        p_half += e * grad
        with np.errstate(invalid="ignore", over="ignore"):
            H = -logp + 0.5 * np.sum(p_half * p_half * inv_mass, axis=1)
            diverged |= (n_steps > k) & ~(H - H0 <= max_err)
    with np.errstate(invalid="ignore", over="ignore"):
        H1 = -logp_out + 0.5 * np.sum(p_out * p_out * inv_mass, axis=1)
        accept = np.where(diverged, 0.0, np.minimum(1.0, np.exp(H0 - H1)))
    accept = np.nan_to_num(accept, nan=0.0)
    return q_out, logp_out, grad_out, accept, diverged


def _find_reasonable_eps(f, q, logp, grad, inv_mass, rngs):
    C = q.shape[0]
    eps = np.ones(C)
    p = np.vstack([r.standard_normal(q.shape[1]) for r in rngs]) / np.sqrt(inv_mass)
    one = np.ones(C, dtype=int)

    def accept_prob(e):
        _, _, _, acc, _ = _trajectory(f, q, logp, grad, e, inv_mass, one, p, np.inf)
        return acc

    acc = accept_prob(eps)
    direction = np.where(acc > 0.5, 1.0, -1.0)
    settled = np.zeros(C, dtype=bool)
    for _ in range(60):
        step = ~settled
        eps = np.where(step, eps * 2.0**direction, eps)
        acc = accept_prob(eps)
        crossed = np.where(direction > 0, acc < 0.5, acc > 0.5)
        settled |= crossed
        if settled.all():
            break
    return np.clip(eps, 1e-8, 1e3)


def run_hmc(target: TargetDensity, cfg: HmcConfig) -> tuple[WeightedSampleSet, ChainDiagnostics]:
    """Sample ``target`` and return pooled post-warmup draws plus diagnostics.

    Step sizes adapt by dual averaging toward ``cfg.target_accept``; the
    diagonal inverse metric is re-estimated at the end of each slow window.
    Divergences (energy error above ``cfg.max_energy_error``) are counted,
    never dropped. Chain ``c`` draws from ``default_rng([cfg.seed, c])``.
    """
    return run_hmc_batch([target], cfg, [cfg.seed])[0]


def run_hmc_batch(targets, cfg: HmcConfig, seeds) -> list[tuple[WeightedSampleSet, ChainDiagnostics]]:
    """Independent runs of several targets on one model, advanced in lockstep.

    Run ``g`` uses ``cfg`` with its seed replaced by ``seeds[g]`` and returns
    exactly what :func:`run_hmc` would; batching only amortizes interpreter
    overhead across chains.
    """
    targets = list(targets)
    seeds = list(seeds)
    if len(targets) != len(seeds) or not targets:
        raise InputError("need one seed per target")
    K = cfg.n_chains
    rngs = [np.random.default_rng([int(sd), c]) for sd in seeds for c in range(K)]
    f = _Batch(_Stacked(targets, K))
    draws, accepts, div, div_warm, eps, inv_mass = _sample(f, targets[0].model, cfg, rngs)
    out = []
    for g, t in enumerate(targets):
        rows = slice(g * K, (g + 1) * K)
        dg = draws[rows]
        pooled = dg.reshape(K * cfg.draws, -1)
        samples = WeightedSampleSet(pooled, t.model.loglik_matrix(pooled), t.tag, seeds[g])
        diag = ChainDiagnostics(
            split_rhat=split_rhat(dg),
            ess_bulk=ess_bulk(dg),
            accept_rate=float(accepts[rows].mean()),
            divergence_count=int(div[rows].sum()),
            warmup_divergences=int(div_warm[rows].sum()),
            step_size=eps[rows].copy(),
            inv_metric=inv_mass[rows].copy(),
            chains=dg,
        )
        out.append((samples, diag))
    return out


def _sample(f, model, cfg, rngs):
    C, d = len(rngs), model.dim
    q = _initial_points(model, cfg.init, rngs)
    logp, grad = f(q)
    if not np.all(np.isfinite(logp)):
        raise NumericalError("non-finite log-density at the initial point")
    inv_mass = np.ones((C, d))
    lo, hi = cfg.leapfrog_range
    eps = _find_reasonable_eps(f, q, logp, grad, inv_mass, rngs)
    da = _DualAveraging(eps, cfg.target_accept)
    init_buf, window_ends = _windows(cfg.warmup)
    window_start = init_buf
    window = []

    total = cfg.warmup + cfg.draws
    draws = np.empty((C, cfg.draws, d))
    accepts = np.empty((C, cfg.draws))
    n_div = np.zeros(C, dtype=int)
    n_div_warm = np.zeros(C, dtype=int)
    for it in range(total):
        n_steps = np.array([r.integers(lo, hi + 1) for r in rngs])
        p0 = np.vstack([r.standard_normal(d) for r in rngs]) / np.sqrt(inv_mass)
        u = np.array([r.uniform() for r in rngs])
        q1, logp1, grad1, acc, div = _trajectory(
            f, q, logp, grad, eps, inv_mass, n_steps, p0, cfg.max_energy_error
        )
        take = u < acc
        q = np.where(take[:, None], q1, q)
        logp = np.where(take, logp1, logp)
        grad = np.where(take[:, None], grad1, grad)
        if it < cfg.warmup:
            n_div_warm += div
            eps = da.update(acc)
            if window_start <= it < (window_ends[-1] if window_ends else 0):
                window.append(q.copy())
                if it + 1 in window_ends:
                    w = np.stack(window, axis=1)
                    nw = w.shape[1]
                    var = w.var(axis=1, ddof=1)
                    inv_mass = (nw / (nw + 5.0)) * var + 1e-3 * (5.0 / (nw + 5.0))
                    window = []
                    eps = _find_reasonable_eps(f, q, logp, grad, inv_mass, rngs)
                    da.restart(eps)
            if it + 1 == cfg.warmup:
                eps = da.final
        else:
            k = it - cfg.warmup
            draws[:, k] = q
            accepts[:, k] = acc
            n_div += div
    return draws, accepts, n_div, n_div_warm, eps, inv_mass
