"""Small dense linear-algebra helpers."""

import numpy as np

from .errors import NumericalError


def chol_update(L, x, sign: float = 1.0):
    """Rank-one update (``sign=+1``) or downdate (``sign=-1``) of a lower Cholesky factor.

    Returns the factor of ``L L^T + sign * x x^T``; inputs are not modified.
    """
    L = np.array(L, dtype=float, copy=True)
    x = np.array(x, dtype=float, copy=True)
    p = x.size
    for k in range(p):
        d = L[k, k]
        r2 = d * d + sign * x[k] * x[k]
        if r2 <= 0.0:
            raise NumericalError("Cholesky downdate lost positive definiteness")
        r = np.sqrt(r2)
        c = r / d
        s = x[k] / d
        L[k, k] = r
        if k + 1 < p:
            L[k + 1 :, k] = (L[k + 1 :, k] + sign * s * x[k + 1 :]) / c
            x[k + 1 :] = c * x[k + 1 :] - s * L[k + 1 :, k]
    return L


def cholesky(A, what: str = "matrix"):
    """Lower Cholesky factor; refuses (raises) instead of pseudo-inverting."""
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise NumericalError(f"{what} is not positive definite") from None


def logdet_chol(L) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))
