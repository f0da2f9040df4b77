"""Experiment configuration: INI files with ``[section]`` headers plus overrides."""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, fields

from .errors import ConfigError

__all__ = ["ExperimentConfig", "load_config", "DESIGNS", "METHODS", "MODELS", "SEED_ENV"]

DESIGNS = ("fig1-leverage", "fig2-mse-grid", "fig3-mse-vs-S", "estimate-file")
METHODS = ("loo", "posterior", "mixture", "psis", "bronze", "gold", "silver")
MODELS = ("gaussian-conjugate", "gaussian-unknown-noise", "logistic")
GROUND_TRUTH = ("auto", "loo-chains", "mixture-long")
SEED_ENV = "LOOMIX_SEED"

_TUPLE_INT = {"n", "p", "S"}
_TUPLE_FLOAT = {"p_over_n"}
_TUPLE_STR = {"methods", "priors"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs.

    Priors are written as ``flat``, a number ``c`` (``Sigma = c I``) or
    ``c/p`` (``Sigma = (c / p) I``). Grids are tuples; ``p`` takes
    precedence over ``p_over_n`` when both are set.
    """

    design: str = "fig2-mse-grid"
    n: tuple[int, ...] = (50,)
    p: tuple[int, ...] = ()
    p_over_n: tuple[float, ...] = (0.5, 1.0, 2.0, 3.0)
    sigma2: float = 1.0
    prior: str = "100/p"
    priors: tuple[str, ...] = ("flat", "10", "10/p")
    S: tuple[int, ...] = (2000,)
    n_replicates: int = 100
    methods: tuple[str, ...] = ("posterior", "psis", "mixture")
    seed: int = 0
    data: str | None = None
    model: str = "gaussian-conjugate"
    glm_prior: str = "laplace"
    standardize: bool = False
    hmc_warmup: int = 1000
    hmc_draws: int = 1000
    hmc_chains: int = 4
    target_accept: float = 0.8
    ground_truth: str = "auto"
    truth_warmup: int = 500
    truth_draws: int = 2500
    truth_tol: float = 0.01
    truth_max_rounds: int = 8
    K: int = 10
    silver_total: int = 20000
    per_observation: bool = False
    include_timing: bool = False
    threads: int = 1
    out: str | None = None
    format: str = "json"

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ConfigError(f"design must be one of {DESIGNS}, got {self.design!r}")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.glm_prior not in ("laplace", "gaussian"):
            raise ConfigError("glm_prior must be laplace or gaussian")
        if self.ground_truth not in GROUND_TRUTH:
            raise ConfigError(f"ground_truth must be one of {GROUND_TRUTH}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"methods must be a non-empty subset of {METHODS}; bad: {bad}")
        if self.design != "estimate-file":
            if not self.n or not self.S or not (self.p or self.p_over_n):
                raise ConfigError("grids n, S and p (or p_over_n) must be non-empty")
        if self.n_replicates < 1:
            raise ConfigError("n_replicates must be at least 1")
        if min(self.n, default=1) < 1 or min(self.p, default=1) < 1:
            raise ConfigError("n and p must be positive")
        if min(self.S, default=2) < 2:
            raise ConfigError("S must be at least 2")
        if any(r <= 0 for r in self.p_over_n):
            raise ConfigError("p_over_n entries must be positive")
        if not self.sigma2 > 0:
            raise ConfigError("sigma2 must be positive")
        if not self.truth_tol > 0 or self.truth_max_rounds < 1:
            raise ConfigError("truth_tol must be positive and truth_max_rounds at least 1")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.format not in ("json", "csv"):
            raise ConfigError("format must be json or csv")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        for spec in (self.prior, *self.priors):
            parse_prior(spec, 1)
        if self.design == "estimate-file" and not self.data:
            raise ConfigError("estimate-file needs a data path")

    def p_grid(self, n: int) -> tuple[int, ...]:
        if self.p:
            return self.p
        return tuple(max(1, int(round(r * n))) for r in self.p_over_n)

    def echo(self) -> dict:
        return {f.name: _plain(getattr(self, f.name)) for f in fields(self)}

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


def parse_prior(spec: str, p: int):
    """Prior covariance for ``spec``: ``FLAT`` or an isotropic variance."""
    from .priors import FLAT

    s = str(spec).strip().lower()
    if s == "flat":
        return FLAT
    try:
        if s.endswith("/p"):
            c = float(s[:-2])
            v = c / p
        else:
            c = v = float(s)
    except ValueError:
        raise ConfigError(f"cannot parse prior {spec!r}; use flat, c or c/p") from None
    if not c > 0:
        raise ConfigError(f"prior variance must be positive in {spec!r}")
    return v


def _canonical(key: str) -> str:
    names = {f.name.lower(): f.name for f in fields(ExperimentConfig)}
    k = key.strip().replace("-", "_").lower()
    if k not in names:
        raise ConfigError(f"unknown config key {key!r}")
    return names[k]


def _coerce(name: str, raw):
    ftype = {f.name: f for f in fields(ExperimentConfig)}
    if raw is None:
        return None
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(raw, list) else raw
    text = raw.strip()
    try:
        if name in _TUPLE_INT:
            return tuple(int(x) for x in _split(text))
        if name in _TUPLE_FLOAT:
            return tuple(float(x) for x in _split(text))
        if name in _TUPLE_STR:
            return tuple(_split(text))
        default = ftype[name].default
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(text)
            return low in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return text or None


def _split(text):
    return [t for t in text.replace(",", " ").split() if t]


def load_config(path=None, overrides: dict | None = None, env=None) -> ExperimentConfig:
    """Build a config from an INI file, the seed environment variable and overrides.

    Keys may sit in any section (sections only group them); a key repeated
    across sections is an error. Precedence: ``overrides`` > environment
    seed > file > defaults.
    """
    env = os.environ if env is None else env
    values: dict = {}
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        for section in cp.sections():
            for key, raw in cp.items(section):
                key = _canonical(key)
                if key in values:
                    raise ConfigError(f"key {key!r} given in more than one section")
                values[key] = _coerce(key, raw)
    if SEED_ENV in env and env[SEED_ENV].strip():
        values["seed"] = _coerce("seed", env[SEED_ENV])
    for key, raw in (overrides or {}).items():
        if raw is not None:
            key = _canonical(key)
            values[key] = _coerce(key, raw)
    return ExperimentConfig(**values)
