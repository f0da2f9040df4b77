"""Simulation designs, file-based estimation and result tables.

Every replicate draws its randomness from ``SeedSequence(seed, spawn_key=key)``
with a key built from its grid position, so results do not depend on the
thread count or on the order in which tasks finish.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import platform
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy

from .config import METHODS, ExperimentConfig, parse_prior
from .conjugate import (
    GaussianLinearModel,
    bayesian_leverages,
    mixture_exact,
    sample_bronze_iid,
    sample_loo_iid,
    sample_mixture_iid,
    sample_posterior_iid,
)
from .data import Dataset, read_csv
from .errors import InputError, LoomixError
from .estimators import (
    bronze_estimate,
    gold_estimate,
    loo_estimate,
    loo_log_mu,
    mixture_estimate,
    posterior_estimate,
    silver_estimate,
)
from .glm import GaussianUnknownNoiseModel, LogisticModel
from .diagnostics import ess_mean
from .hmc import HmcConfig, run_hmc_batch
from .model import TargetDensity
from .priors import FLAT
from .psis import khat_fraction, psis_estimate

__all__ = [
    "ResultTable",
    "gen_synthetic",
    "run_fig1",
    "run_fig2",
    "run_fig3",
    "estimate_file",
    "run_experiment",
    "build_model",
    "ground_truth",
    "task_rng",
    "task_seed",
    "versions",
]

LOO_CHAIN_MAX_N = 100
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
_TRUTH_KEY = 2**32 - 1


def task_seed(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))


def task_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator owned by the task at grid position ``key``."""
    return np.random.default_rng(task_seed(seed, *key))


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, np.uint64)[0])


def versions() -> dict:
    from . import __version__

    return {
        "loomix": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def _json_value(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, np.integer):
        return int(v)
    return v


@dataclass
class ResultTable:
    """Rows keyed by ``(design, method, statistic)``.

    ``design`` is a ``key=value;...`` string naming the grid point.
    Non-finite values serialize as the strings ``"inf"``, ``"-inf"`` and
    ``"nan"`` so the JSON stays standard.
    """

    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def add(self, design: str, method: str, statistic: str, value) -> None:
        self.rows.append(
            {"design": design, "method": method, "statistic": statistic, "value": _json_value(value)}
        )

    def fail(self, design: str, method: str, reason: str, replicate=None) -> None:
        self.failures.append(
            {"design": design, "method": method, "replicate": replicate, "reason": reason}
        )

    def extend(self, other: "ResultTable") -> None:
        self.rows.extend(other.rows)
        self.failures.extend(other.failures)

    def get(self, design: str, method: str, statistic: str):
        for r in self.rows:
            if (r["design"], r["method"], r["statistic"]) == (design, method, statistic):
                v = r["value"]
                return float(v) if isinstance(v, str) else v
        raise KeyError((design, method, statistic))

    def to_dict(self, config: ExperimentConfig) -> dict:
        return {
            "config_echo": config.echo(),
            "results": self.rows,
            "failures": self.failures,
            "versions": versions(),
            "seed": config.seed,
        }

    def to_json(self, config: ExperimentConfig) -> str:
        return json.dumps(self.to_dict(config), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, ["design", "method", "statistic", "value"], lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            v = r["value"]
            w.writerow({**r, "value": repr(v) if isinstance(v, float) else v})
        return buf.getvalue()

    def render(self, config: ExperimentConfig, fmt: str | None = None) -> str:
        fmt = fmt or config.format
        return self.to_json(config) if fmt == "json" else self.to_csv()


def _map(fn, items, threads: int):
    """Ordered map, concurrent when ``threads > 1``."""
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def gen_synthetic(n: int, p: int, sigma2: float, prior, seed=None):
    """Random design plus responses from the Gaussian linear model.

    ``X`` has i.i.d. standard normal entries and ``theta`` is drawn from
    the prior; then ``y ~ N(X theta, sigma2 I)``. ``prior`` is a prior string
    (``flat``, ``c``, ``c/p``), a variance, or :data:`~loomix.priors.FLAT`;
    under the flat prior ``theta`` is drawn from ``N(0, I)``.
    """
    if n < 1 or p < 1:
        raise InputError("n and p must be positive")
    if not (np.isfinite(sigma2) and sigma2 > 0):
        raise InputError("sigma2 must be positive (sigma2 = 0 gives a degenerate likelihood)")
    Sigma = parse_prior(prior, p) if isinstance(prior, str) else prior
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    scale = 1.0 if Sigma is FLAT else math.sqrt(float(Sigma))
    theta = scale * rng.standard_normal(p)
    y = X @ theta + math.sqrt(sigma2) * rng.standard_normal(n)
    data = Dataset(y, X)
    return GaussianLinearModel(data, sigma2, 0.0, Sigma), data


def _design(**kw) -> str:
    return ";".join(f"{k}={v}" for k, v in kw.items())


# --------------------------------------------------------------------- fig1


def run_fig1(config: ExperimentConfig) -> ResultTable:
    """Leverage distributions per ``(n, p, prior)`` as quantile summaries."""
    table = ResultTable()
    cells = []
    for a, n in enumerate(config.n):
        for b, p in enumerate(config.p_grid(n)):
            for c, spec in enumerate(config.priors):
                cells.append((a, b, c, n, p, spec))
    for a, b, c, n, p, spec in cells:
        design = _design(n=n, p=p, prior=spec)
        Sigma = parse_prior(spec, p)
        if Sigma is FLAT and p >= n:
            table.fail(design, "leverage", "flat prior requires p < n")
            continue

        def one(r, n=n, p=p, Sigma=Sigma, key=(a, b, c)):
            X = task_rng(config.seed, *key, r).standard_normal((n, p))
            return bayesian_leverages(X, config.sigma2, Sigma)

        h = np.concatenate(_map(one, range(config.n_replicates), config.threads))
        table.add(design, "leverage", "mean", float(h.mean()))
        for q, v in zip(QUANTILES, np.quantile(h, QUANTILES)):
            table.add(design, "leverage", f"q{int(round(100 * q)):02d}", float(v))
    return table


# ------------------------------------------------------- conjugate designs


def _conjugate_draws(method, m, S, rng, me=None):
    if method in ("posterior", "psis"):
        return sample_posterior_iid(m, S, rng)
    if method == "mixture":
        return sample_mixture_iid(me, S, rng)
    if method == "bronze":
        return sample_bronze_iid(m, S, rng)
    raise InputError(method)


def _records_for(method, samples):
    if method == "posterior":
        return posterior_estimate(samples)
    if method == "psis":
        return psis_estimate(samples)
    if method == "mixture":
        return mixture_estimate(samples)
    if method == "bronze":
        return bronze_estimate(samples)
    raise InputError(method)


_SOURCES = ("posterior", "mixture", "bronze")


def _source(method):
    return "posterior" if method in ("posterior", "psis") else method


def _method_key(method):
    """Seed-key component of a method; shared sample sets are keyed by their source."""
    if method in ("posterior", "psis", "mixture", "bronze"):
        return 100 + _SOURCES.index(_source(method))
    return METHODS.index(method)


def _conjugate_replicate(m, truth, methods, S, seed, key, K, alpha=None):
    """Per-observation log-estimates (or a ``psi`` value) for each method at budget ``S``.

    Posterior and PSIS share one posterior sample set, as in practice.
    """
    out = {}
    shared = {}
    me = None
    for method in methods:
        rng = task_rng(seed, *key, _method_key(method))
        t0 = time.perf_counter()
        if method == "loo":
            sets = [sample_loo_iid(m, i, S, rng) for i in range(m.n_obs)]
            recs = loo_estimate(sets)
            res = {"log_mu": np.array([r.log_mu_hat for r in recs])}
        elif method == "gold":
            res = {"psi": gold_estimate(truth, min(K, m.n_obs), rng).value}
        elif method == "silver":
            ss = task_seed(seed, *key, _method_key(method))
            res = {"psi": silver_estimate(m, min(K, m.n_obs), S, _int_seed(ss)).value}
        else:
            src = _source(method)
            if src == "mixture" and me is None:
                me = mixture_exact(m, alpha)
            if src not in shared:
                shared[src] = _conjugate_draws(src, m, S, rng, me)
            recs = _records_for(method, shared[src])
            res = {"log_mu": np.array([r.log_mu_hat for r in recs])}
            if method == "psis":
                res["khat_frac"] = khat_fraction(recs)
        res["runtime"] = time.perf_counter() - t0
        out[method] = res
    return out


def _summarize(table, design, method, reps, truth_psi, include_timing, rep_truths):
    """Aggregate replicate outputs: MSE averaged over observations and datasets."""
    if "log_mu" in reps[0]:
        sq = []
        excluded = 0
        for r, (res, truth) in enumerate(zip(reps, rep_truths)):
            est = res["log_mu"]
            bad = ~np.isfinite(est)
            if bad.any():
                excluded += int(bad.sum())
                table.fail(design, method, f"{int(bad.sum())} non-finite estimates excluded", r)
            sq.append(np.where(bad, np.nan, (est - truth) ** 2))
        sq = np.array(sq)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            table.add(design, method, "mse_mean", float(np.nanmean(sq)))
            table.add(design, method, "mse_max", float(np.nanmax(np.nanmean(sq, axis=0))))
        table.add(design, method, "n_excluded", excluded)
        if "khat_frac" in reps[0]:
            table.add(design, method, "khat_frac", float(np.mean([r["khat_frac"] for r in reps])))
    else:
        err = np.array([r["psi"] for r in reps]) - np.asarray(truth_psi)
        table.add(design, method, "psi_mse", float(np.mean(err**2)))
    if include_timing:
        table.add(design, method, "runtime", float(sum(r["runtime"] for r in reps)))


def _mse_grid(config: ExperimentConfig, points, by_S: bool) -> ResultTable:
    """Shared driver for the MSE designs.

    ``points`` lists ``(n, p)``; every replicate is a fresh dataset and every
    ``S`` in the grid gets fresh draws.
    """
    table = ResultTable()
    methods = config.methods
    for a, (n, p) in enumerate(points):
        Sigma = parse_prior(config.prior, p)
        base = _design(n=n, p=p)
        if Sigma is FLAT and p >= n:
            for method in methods:
                table.fail(base, method, "flat prior requires p < n")
            continue

        def one(r, n=n, p=p, Sigma=Sigma, a=a):
            m, _ = gen_synthetic(n, p, config.sigma2, Sigma, task_rng(config.seed, a, r))
            truth = m.loo_summary["log_mu"]
            per_S = [
                _conjugate_replicate(m, truth, methods, S, config.seed, (a, r, b), config.K)
                for b, S in enumerate(config.S)
            ]
            return truth, per_S

        try:
            reps = _map(one, range(config.n_replicates), config.threads)
        except LoomixError as exc:
            for method in methods:
                table.fail(base, method, str(exc))
            continue
        truths = [t for t, _ in reps]
        for b, S in enumerate(config.S):
            design = _design(n=n, p=p, S=S) if by_S else base
            for method in methods:
                _summarize(
                    table,
                    design,
                    method,
                    [per_S[b][method] for _, per_S in reps],
                    [t.sum() for t in truths],
                    config.include_timing,
                    truths,
                )
        if by_S and len(config.S) >= 2:
            for method in methods:
                stat = "mse_mean" if "log_mu" in reps[0][1][0][method] else "psi_mse"
                mse = [table.get(_design(n=n, p=p, S=S), method, stat) for S in config.S]
                table.add(base, method, "slope", loglog_slope(config.S, mse))
    return table


def loglog_slope(S, mse) -> float:
    """Least-squares slope of ``log mse`` against ``log S``."""
    S = np.asarray(S, dtype=float)
    mse = np.asarray(mse, dtype=float)
    ok = np.isfinite(mse) & (mse > 0)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(S[ok]), np.log(mse[ok]), 1)[0])


def run_fig2(config: ExperimentConfig) -> ResultTable:
    """MSE of log-estimates across a ``p / n`` grid at fixed ``S`` (first entry of ``S``)."""
    points = [(n, p) for n in config.n for p in config.p_grid(n)]
    return _mse_grid(config.replace(S=config.S[:1]), points, by_S=False)


def run_fig3(config: ExperimentConfig) -> ResultTable:
    """MSE against ``S`` per ``(n, p)`` plus the fitted log-log slope."""
    points = [(n, p) for n in config.n for p in config.p_grid(n)]
    return _mse_grid(config, points, by_S=True)


# --------------------------------------------------------- estimate-file


def build_model(data: Dataset, config: ExperimentConfig):
    if config.model == "gaussian-conjugate":
        return GaussianLinearModel(data, config.sigma2, 0.0, parse_prior(config.prior, data.p))
    if config.model == "logistic":
        return LogisticModel(data, config.glm_prior)
    return GaussianUnknownNoiseModel(data, config.glm_prior)


_TRUTH_CACHE: dict = {}


def _truth_key(model, config, protocol) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(model.data.y).tobytes())
    h.update(np.ascontiguousarray(model.data.X).tobytes())
    h.update(
        repr(
            (
                type(model).__name__,
                config.glm_prior,
                protocol,
                config.truth_warmup,
                config.truth_draws,
                config.truth_tol,
                config.truth_max_rounds,
                config.hmc_chains,
                config.target_accept,
                config.seed,
            )
        ).encode()
    )
    return h.hexdigest()


def ground_truth(model, config: ExperimentConfig, return_mcse: bool = False):
    """Reference ``log p(y_i | y_{-i})`` for a model without closed form.

    ``loo-chains``: one long HMC run per observation on its LOO posterior.
    ``mixture-long``: a single run on the mixture with ten times the draws.
    ``auto`` picks LOO chains below ``n = 100``. Results are cached per
    data, model and sampler settings.

    Returns
    -------
    ndarray, or (ndarray, ndarray) with ``return_mcse``
        Reference values and their Monte Carlo standard errors.
    """
    protocol = config.ground_truth
    if protocol == "auto":
        protocol = "loo-chains" if model.n_obs < LOO_CHAIN_MAX_N else "mixture-long"
    key = _truth_key(model, config, protocol)
    if key in _TRUTH_CACHE:
        out = _TRUTH_CACHE[key]
        return (out[0].copy(), out[1].copy()) if return_mcse else out[0].copy()
    cache_dir = os.environ.get("LOOMIX_CACHE_DIR")
    path = os.path.join(cache_dir, f"truth-{key[:32]}.npy") if cache_dir else None
    if path and os.path.exists(path):
        out = np.load(path)
    else:
        out = np.stack(_compute_truth(model, config, protocol))
        if path:
            os.makedirs(cache_dir, exist_ok=True)
            np.save(path, out)
    _TRUTH_CACHE[key] = out
    return (out[0].copy(), out[1].copy()) if return_mcse else out[0].copy()


def _compute_truth(model, config, protocol):
    def cfg(draws):
        return HmcConfig(
            warmup=config.truth_warmup,
            draws=draws,
            n_chains=config.hmc_chains,
            target_accept=config.target_accept,
        )

    if protocol == "mixture-long":
        ss = task_seed(config.seed, _TRUTH_KEY, model.n_obs)
        s, _ = run_hmc_batch([TargetDensity.mixture(model)], cfg(10 * config.truth_draws), [_int_seed(ss)])[0]
        recs = mixture_estimate(s)
        return np.array([r.log_mu_hat for r in recs]), np.full(len(recs), np.nan)
    return _loo_chain_truth(model, config, cfg(config.truth_draws))


def _loo_chain_truth(model, config, cfg):
    """Brute-force LOO estimates from rounds of independent LOO chains.

    Every round adds one run per unresolved observation (``copies`` runs
    when a single run's standard error is far above target). Rounds stop
    once the Monte Carlo standard error of every ``log mu_i`` is below
    ``truth_tol`` or after ``truth_max_rounds``.
    """
    n = model.n_obs
    sums = [[] for _ in range(n)]  # per run: (log mean of p(y_i|theta), variance of that mean)
    pending = list(range(n))
    copies = {i: 1 for i in range(n)}
    rnd = 0
    while pending and rnd < config.truth_max_rounds:
        targets, seeds, owners = [], [], []
        for i in pending:
            for c in range(copies[i]):
                targets.append(TargetDensity.loo(model, i))
                seeds.append(_int_seed(task_seed(config.seed, _TRUTH_KEY, i, rnd, c)))
                owners.append(i)
        runs = run_hmc_batch(targets, cfg, seeds)
        for i, (s, d) in zip(owners, runs):
            ell = s.loglik[i].reshape(cfg.n_chains, cfg.draws)
            top = ell.max()
            v = np.exp(ell - top)
            mean = v.mean()
            ess = float(ess_mean(v)[0]) if np.ptp(v) > 0 else float(v.size)
            var_of_mean = v.var(ddof=1) / max(ess, 1.0)
            sums[i].append((math.log(mean) + top, var_of_mean / mean**2))
        still = []
        for i in pending:
            lm, rel = _pool(sums[i])
            if math.sqrt(rel) > config.truth_tol:
                still.append(i)
                # runs needed if the relative variance shrinks like 1 / (number of runs)
                need = rel * len(sums[i]) / config.truth_tol**2 - len(sums[i])
                copies[i] = int(min(max(1, math.ceil(need)), 64))
        pending = still
        rnd += 1
    out = np.array([_pool(sums[i])[0] for i in range(n)])
    mcse = np.array([math.sqrt(_pool(sums[i])[1]) for i in range(n)])
    return out, mcse


def _pool(runs):
    """Average of equally sized runs: log of the mean and its relative variance."""
    logs = np.array([r[0] for r in runs])
    rels = np.array([r[1] for r in runs])
    top = logs.max()
    w = np.exp(logs - top)
    mean = w.mean()
    # var(mean of means) = sum var_g / G^2, each var_g = rel_g * m_g^2
    var = np.sum(rels * w**2) / len(runs) ** 2
    return float(math.log(mean) + top), float(var / mean**2)


def _hmc_cfg(config):
    return HmcConfig(
        warmup=config.hmc_warmup,
        draws=config.hmc_draws,
        n_chains=config.hmc_chains,
        target_accept=config.target_accept,
    )


def _mcmc_replicates(model, truth, config):
    """Every replicate of every requested method on a non-conjugate model.

    Replicates of one sampling target run stacked in a single batch; each
    keeps its own seed, so the output equals separate runs.
    """
    R = range(config.n_replicates)
    targets = {
        "posterior": TargetDensity.posterior,
        "mixture": TargetDensity.mixture,
        "bronze": TargetDensity.bronze,
    }
    cfg = _hmc_cfg(config)
    runs = {}
    timing = {}
    for method in config.methods:
        src = _source(method)
        if src in targets and src not in runs:
            t0 = time.perf_counter()
            t = targets[src](model)
            seeds = [_int_seed(task_seed(config.seed, r, _method_key(src))) for r in R]
            runs[src] = run_hmc_batch([t] * len(seeds), cfg, seeds)
            timing[src] = (time.perf_counter() - t0) / len(seeds)
    out = []
    for r in R:
        rep = {}
        for method in config.methods:
            k = _method_key(method)
            ss = task_seed(config.seed, r, k)
            t0 = time.perf_counter()
            res = {}
            if method == "loo":
                n = model.n_obs
                seeds = [_int_seed(task_seed(config.seed, r, k, i)) for i in range(n)]
                batch = run_hmc_batch([TargetDensity.loo(model, i) for i in range(n)], cfg, seeds)
                recs = loo_estimate([s for s, _ in batch])
                res["divergences"] = sum(d.divergence_count for _, d in batch)
            elif method == "gold":
                K = min(config.K, model.n_obs)
                res["psi"] = gold_estimate(truth, K, np.random.default_rng(ss)).value
            elif method == "silver":
                K = min(config.K, model.n_obs)
                res["psi"] = silver_estimate(model, K, config.silver_total, _int_seed(ss), cfg).value
            else:
                s, d = runs[_source(method)][r]
                recs = _records_for(method, s)
                res["divergences"] = d.divergence_count
                res["max_rhat"] = float(np.nanmax(d.split_rhat))
                if method == "psis":
                    res["khat_frac"] = khat_fraction(recs)
            if "psi" not in res:
                res["log_mu"] = np.array([x.log_mu_hat for x in recs])
            res["runtime"] = time.perf_counter() - t0 + timing.get(_source(method), 0.0)
            rep[method] = res
        out.append(rep)
    return out


def estimate_file(config: ExperimentConfig) -> ResultTable:
    """Run the requested estimators on a CSV dataset against a reference.

    Conjugate models use exact i.i.d. draws and closed-form truth;
    the others use HMC and :func:`ground_truth`. With
    ``per_observation`` the table also holds every replicate's
    per-observation estimate and squared error.
    """
    data = read_csv(config.data)
    if config.standardize:
        data = data.standardized(response=config.model != "logistic")
    model = build_model(data, config)
    conj = isinstance(model, GaussianLinearModel)
    if conj:
        truth, mcse = model.loo_summary["log_mu"], np.zeros(model.n_obs)
    else:
        truth, mcse = ground_truth(model, config, return_mcse=True)
    design = _design(n=data.n, p=data.p)
    S = config.hmc_draws * config.hmc_chains

    if conj:

        def one(r):
            return _conjugate_replicate(model, truth, config.methods, S, config.seed, (r,), config.K)

        reps = _map(one, range(config.n_replicates), config.threads)
    else:
        reps = _mcmc_replicates(model, truth, config)
    table = ResultTable()
    table.add(design, "truth", "psi", float(truth.sum()))
    for i, v in enumerate(truth):
        table.add(_design(obs=i), "truth", "log_mu", float(v))
        table.add(_design(obs=i), "truth", "mcse", float(mcse[i]))
    unresolved = np.flatnonzero(mcse > config.truth_tol)
    if unresolved.size:
        table.fail(
            design,
            "truth",
            f"reference MCSE above {config.truth_tol} at observations {unresolved.tolist()}",
        )
    for method in config.methods:
        mreps = [rep[method] for rep in reps]
        _summarize(
            table, design, method, mreps, truth.sum(), config.include_timing, [truth] * len(mreps)
        )
        if "log_mu" in mreps[0]:
            psis = [float(np.sum(x["log_mu"])) for x in mreps]
            table.add(design, method, "psi_mean", float(np.mean(psis)))
        if "divergences" in mreps[0]:
            table.add(design, method, "divergences", int(sum(x["divergences"] for x in mreps)))
        if "max_rhat" in mreps[0]:
            table.add(design, method, "max_rhat", float(max(x["max_rhat"] for x in mreps)))
        if config.per_observation and "log_mu" in mreps[0]:
            for r, x in enumerate(mreps):
                for i, v in enumerate(x["log_mu"]):
                    d = _design(rep=r, obs=i)
                    table.add(d, method, "log_mu_hat", float(v))
                    table.add(d, method, "sq_err", float((v - truth[i]) ** 2))
    return table


def run_experiment(config: ExperimentConfig) -> ResultTable:
    runners = {
        "fig1-leverage": run_fig1,
        "fig2-mse-grid": run_fig2,
        "fig3-mse-vs-S": run_fig3,
        "estimate-file": estimate_file,
    }
    return runners[config.design](config)
