"""Bayesian leave-one-out predictive densities by importance sampling.

The main entry points are the estimators in :mod:`loomix.estimators`, the
samplers in :mod:`loomix.conjugate` and :mod:`loomix.hmc`, and the
scikit-learn style wrapper :class:`loomix.LooCV`.
"""

__version__ = "0.1.0"

from .conjugate import GaussianLinearModel, mixture_exact
from .data import Dataset, read_csv, write_csv
from .errors import ConfigError, DataError, InputError, LoomixError, NumericalError
from .estimator import LooCV
from .estimators import (
    EstimateRecord,
    PsiEstimate,
    bronze_estimate,
    gold_estimate,
    loo_estimate,
    mixture_estimate,
    posterior_estimate,
    psi_plugin,
    silver_estimate,
)
from .glm import GaussianUnknownNoiseModel, LogisticModel
from .hmc import HmcConfig, run_hmc
from .model import TargetDensity, WeightedSampleSet
from .priors import FLAT, GaussianPrior, LaplacePrior
from .psis import psis_estimate

__all__ = [
    "__version__",
    "Dataset",
    "read_csv",
    "write_csv",
    "GaussianLinearModel",
    "LogisticModel",
    "GaussianUnknownNoiseModel",
    "GaussianPrior",
    "LaplacePrior",
    "FLAT",
    "TargetDensity",
    "WeightedSampleSet",
    "HmcConfig",
    "run_hmc",
    "mixture_exact",
    "EstimateRecord",
    "PsiEstimate",
    "loo_estimate",
    "posterior_estimate",
    "mixture_estimate",
    "bronze_estimate",
    "psis_estimate",
    "gold_estimate",
    "silver_estimate",
    "psi_plugin",
    "LooCV",
    "LoomixError",
    "ConfigError",
    "InputError",
    "DataError",
    "NumericalError",
]
