"""Coefficient priors shared by the conjugate and GLM backends.

Every density here accepts a batch of parameter vectors with shape ``(..., d)``
and returns values of shape ``(...)``.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, solve_triangular

from .errors import InputError

__all__ = ["FlatPrior", "GaussianPrior", "LaplacePrior", "FLAT"]

_LOG_2PI = np.log(2 * np.pi)


class FlatPrior:
    """Improper uniform prior (zero precision)."""

    proper = False

    def logpdf(self, theta):
        return np.zeros(np.shape(theta)[:-1])

    def grad(self, theta):
        return np.zeros(np.shape(theta))

    def sample(self, rng, size, dim):
        raise InputError("cannot sample from a flat prior")

    def __repr__(self):
        return "FlatPrior()"


FLAT = FlatPrior()


class GaussianPrior:
    """Multivariate normal prior N(mean, cov).

    ``cov`` may be a scalar (isotropic), a vector (diagonal) or a full
    symmetric positive-definite matrix.
    """

    proper = True

    def __init__(self, mean, cov, dim: int | None = None):
        cov = np.asarray(cov, dtype=float)
        if dim is None:
            dim = np.size(mean) if np.ndim(mean) else (cov.shape[0] if cov.ndim else 1)
        self.dim = int(dim)
        self.mean = np.broadcast_to(np.asarray(mean, dtype=float), (self.dim,)).copy()
        if cov.ndim == 2:
            if cov.shape != (self.dim, self.dim):
                raise InputError(f"cov must be {self.dim}x{self.dim}")
            if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
                raise InputError("prior covariance must be symmetric")
            try:
                c, _ = cho_factor(cov, lower=True)
            except np.linalg.LinAlgError:
                raise InputError("prior covariance must be positive definite") from None
            self.chol = np.tril(c)
            self.diag = None
            self.cov = cov
        else:
            var = np.broadcast_to(cov, (self.dim,)).astype(float)
            if np.any(var <= 0):
                raise InputError("prior variances must be positive")
            self.diag = var.copy()
            self.chol = None
            self.cov = np.diag(self.diag)
        if self.diag is not None:
            self._logdet = float(np.sum(np.log(self.diag)))
        else:
            self._logdet = 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    @property
    def precision(self) -> np.ndarray:
        if self.diag is not None:
            return np.diag(1.0 / self.diag)
        eye = np.eye(self.dim)
        linv = solve_triangular(self.chol, eye, lower=True)
        return linv.T @ linv

    def _whiten(self, delta):
        if self.diag is not None:
            return delta / np.sqrt(self.diag)
        flat = delta.reshape(-1, self.dim).T
        return solve_triangular(self.chol, flat, lower=True).T.reshape(delta.shape)

    def logpdf(self, theta):
        z = self._whiten(np.asarray(theta, dtype=float) - self.mean)
        return -0.5 * (np.sum(z * z, axis=-1) + self.dim * _LOG_2PI + self._logdet)

    def grad(self, theta):
        delta = np.asarray(theta, dtype=float) - self.mean
        if self.diag is not None:
            return -delta / self.diag
        flat = delta.reshape(-1, self.dim).T
        z = solve_triangular(self.chol, flat, lower=True)
        g = solve_triangular(self.chol, z, lower=True, trans="T")
        return -g.T.reshape(delta.shape)

    def sample(self, rng, size, dim=None):
        z = rng.standard_normal((size, self.dim))
        if self.diag is not None:
            return self.mean + z * np.sqrt(self.diag)
        return self.mean + z @ self.chol.T

    def __repr__(self):
        return f"GaussianPrior(dim={self.dim})"


class LaplacePrior:
    """Independent Laplace (double-exponential) coordinates with scale ``b``.

    The gradient uses ``sign(0) = 0`` at the kink.
    """

    proper = True

    def __init__(self, scale, dim: int, loc=0.0):
        self.dim = int(dim)
        self.scale = np.broadcast_to(np.asarray(scale, dtype=float), (self.dim,)).copy()
        self.loc = np.broadcast_to(np.asarray(loc, dtype=float), (self.dim,)).copy()
        if np.any(self.scale <= 0):
            raise InputError("Laplace scale must be positive")

    @property
    def variance(self):
        return 2.0 * self.scale**2

    def logpdf(self, theta):
        a = np.abs(np.asarray(theta, dtype=float) - self.loc) / self.scale
        return -np.sum(np.log(2 * self.scale) + a, axis=-1)

    def grad(self, theta):
        return -np.sign(np.asarray(theta, dtype=float) - self.loc) / self.scale

    def sample(self, rng, size, dim=None):
        return rng.laplace(self.loc, self.scale, size=(size, self.dim))

    def __repr__(self):
        return f"LaplacePrior(dim={self.dim})"
