"""Dataset container and CSV ingestion."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = ["Dataset", "read_csv", "write_csv"]


@dataclass(frozen=True)
class Dataset:
    """Responses ``y`` (length n) and covariates ``X`` (n x p)."""

    y: np.ndarray
    X: np.ndarray
    names: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        # contiguous copies keep BLAS results independent of how the arrays were built
        y = np.array(self.y, dtype=float, order="C")
        X = np.array(self.X, dtype=float, order="C")
        if y.ndim != 1:
            raise DataError(f"y must be 1-d, got shape {y.shape}")
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise DataError(f"X must be 2-d, got shape {X.shape}")
        if y.size < 1 or X.shape[1] < 1:
            raise DataError("need n >= 1 observations and p >= 1 covariates")
        if X.shape[0] != y.size:
            raise DataError(f"X has {X.shape[0]} rows but y has length {y.size}")
        if not np.all(np.isfinite(y)):
            raise DataError("y contains non-finite entries")
        if not np.all(np.isfinite(X)):
            raise DataError("X contains non-finite entries")
        if self.names is not None and len(self.names) != X.shape[1]:
            raise DataError("names must have one entry per column of X")
        y.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def standardized(self, response: bool = True) -> "Dataset":
        """Center and scale covariates (and optionally the response) to unit variance.

        Constant columns (an intercept, say) are left untouched.
        """
        sd = self.X.std(axis=0)
        const = sd == 0
        X = np.where(const, self.X, (self.X - self.X.mean(axis=0)) / np.where(const, 1.0, sd))
        y = self.y
        if response:
            y = y - y.mean()
            sd_y = y.std()
            if sd_y > 0:
                y = y / sd_y
        return Dataset(y, X, self.names)

    def drop(self, i: int) -> "Dataset":
        keep = np.arange(self.n) != i
        return Dataset(self.y[keep], self.X[keep], self.names)


def read_csv(path_or_buffer, standardize: bool = False) -> Dataset:
    """Read a dataset whose first column is ``y`` followed by covariate columns.

    Raises
    ------
    DataError
        On a missing/misplaced ``y`` header, ragged rows or unparsable
        numbers; the message carries the 1-based line number.
    """
    if isinstance(path_or_buffer, (str, Path)):
        try:
            with open(path_or_buffer, newline="", encoding="utf-8") as fh:
                text = fh.read()
        except (OSError, UnicodeDecodeError) as exc:
            raise DataError(f"cannot read {path_or_buffer}: {exc}") from None
    else:
        text = path_or_buffer.read()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("line 1: empty file") from None
    header = [h.strip() for h in header]
    if not header or header[0] != "y":
        raise DataError("line 1: first column must be named 'y'")
    if len(header) < 2:
        raise DataError("line 1: need at least one covariate column")
    rows = []
    linenos = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(
                f"line {lineno}: expected {len(header)} fields, got {len(row)}"
            )
        try:
            rows.append([float(c) for c in row])
            linenos.append(lineno)
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
    if not rows:
        raise DataError("no data rows")
    arr = np.array(rows)
    if not np.all(np.isfinite(arr)):
        bad = linenos[int(np.argwhere(~np.isfinite(arr))[0, 0])]
        raise DataError(f"line {bad}: non-finite value")
    ds = Dataset(arr[:, 0], arr[:, 1:], tuple(header[1:]))
    return ds.standardized() if standardize else ds


def write_csv(dataset: Dataset, path_or_buffer) -> None:
    """Write ``dataset`` in the format :func:`read_csv` reads (round-trips exactly)."""
    if isinstance(path_or_buffer, (str, Path)):
        with open(path_or_buffer, "w", newline="", encoding="utf-8") as fh:
            _write(dataset, fh)
    else:
        _write(dataset, path_or_buffer)


def _write(dataset, fh):
    names = dataset.names or tuple(f"x{j + 1}" for j in range(dataset.p))
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("y",) + tuple(names))
    for yi, xi in zip(dataset.y, dataset.X):
        w.writerow([repr(float(yi))] + [repr(float(v)) for v in xi])
