"""Regenerate src/loomix/data/logistic_leverage.csv (30 rows, intercept + 2 covariates).

The last row sits far out in covariate space with a label that contradicts
the trend, so it dominates the fit and its LOO posterior differs sharply
from the full posterior.
"""

import sys

import numpy as np

from loomix.data import Dataset, write_csv

rng = np.random.default_rng(20240607)
n = 29
x = rng.standard_normal((n, 2))
beta = np.array([0.0, 1.5, -1.0])
X = np.column_stack([np.ones(n), x])
y = (rng.uniform(size=n) < 1 / (1 + np.exp(-X @ beta))).astype(float)
X = np.vstack([X, [1.0, 3.5, -3.0]])
y = np.append(y, 0.0)
out = sys.argv[1] if len(sys.argv) > 1 else "src/loomix/data/logistic_leverage.csv"
write_csv(Dataset(y, X, ("intercept", "x1", "x2")), out)
