"""Dataset container, CSV ingestion and covariate standardization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .exceptions import (
    DataError,
    DegenerateColumnError,
    SchemaError,
    ValidationError,
)


@dataclass(frozen=True)
class Dataset:
    """Immutable (outcome, treatment, covariates) triple.

    Parameters
    ----------
    y : ndarray, shape (n,)
        Continuous outcome.
    d : ndarray, shape (n,)
        Binary treatment indicator coded 0/1.
    x : ndarray, shape (n, r2)
        Covariate matrix.
    names : tuple of str
        Unique covariate names, one per column of ``x``.
    """

    y: np.ndarray
    d: np.ndarray
    x: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        d = np.asarray(self.d, dtype=float)
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "names", tuple(str(c) for c in self.names))
        if y.ndim != 1 or d.ndim != 1:
            raise ValidationError("y and d must be one-dimensional")
        n = y.shape[0]
        if d.shape[0] != n or x.shape[0] != n:
            raise ValidationError(
                f"length mismatch: y has {n} rows, d has {d.shape[0]}, x has {x.shape[0]}"
            )
        if not np.isin(d, (0.0, 1.0)).all():
            bad = np.unique(d[~np.isin(d, (0.0, 1.0))])
            raise ValidationError(f"treatment must be coded 0/1, found values {bad}")
        if x.shape[1] != len(self.names):
            raise ValidationError(
                f"x has {x.shape[1]} columns but {len(self.names)} names were given"
            )
        if len(set(self.names)) != len(self.names):
            raise ValidationError("covariate names must be unique")
        if not np.isfinite(y).all() or not np.isfinite(x).all():
            raise ValidationError("y and x must be finite (see load_csv for NaN policy)")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def r2(self) -> int:
        return self.x.shape[1]

    def both_arms(self) -> bool:
        """True when both treatment levels are present."""
        return bool(self.d.min() == 0.0 and self.d.max() == 1.0)

    def subset(self, rows: np.ndarray) -> "Dataset":
        """Row subset / resample (used by the bootstrap)."""
        return Dataset(self.y[rows], self.d[rows], self.x[rows], self.names)

    def to_frame(self, outcome_col: str = "y", treatment_col: str = "d") -> pd.DataFrame:
        cols = {outcome_col: self.y, treatment_col: self.d.astype(int)}
        for j, name in enumerate(self.names):
            cols[name] = self.x[:, j]
        return pd.DataFrame(cols)

    def to_csv(self, path, outcome_col: str = "y", treatment_col: str = "d") -> None:
        """Write as RFC-4180 CSV with 17 significant digits (lossless round trip)."""
        self.to_frame(outcome_col, treatment_col).to_csv(
            path, index=False, float_format="%.17g"
        )


@dataclass(frozen=True)
class Scaler:
    """Column means and SDs recorded by :func:`standardize`."""

    mean: np.ndarray
    sd: np.ndarray
    names: tuple[str, ...] = field(default=())

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.sd

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return x * self.sd + self.mean


def load_csv(
    path,
    outcome_col: str,
    treatment_col: str,
    treatment_labels: tuple[str, str] | None = None,
    drop_missing: bool = False,
) -> Dataset:
    """Read a dataset from CSV.

    All columns other than ``outcome_col`` and ``treatment_col`` become
    covariates, in file order.

    Parameters
    ----------
    treatment_labels : (control, treated) pair, optional
        Maps two arbitrary labels onto 0/1.  Without it the treatment
        column must already contain only 0 and 1.
    drop_missing : bool
        If True, rows containing missing cells are dropped (listwise
        deletion) and the count is reported via ``Dataset`` attribute-free
        return; if False (default) any NaN/inf cell raises
        :class:`DataError` naming the row and column.

    Returns
    -------
    Dataset
    """
    df = pd.read_csv(path)
    for col in (outcome_col, treatment_col):
        if col not in df.columns:
            raise SchemaError(f"column {col!r} not found in {path}")

    if treatment_labels is not None:
        control, treated = (str(v) for v in treatment_labels)
        raw = df[treatment_col].astype(str)
        unknown = sorted(set(raw) - {control, treated})
        if unknown:
            raise ValidationError(
                f"treatment column {treatment_col!r} contains labels {unknown} "
                f"outside the declared pair ({control!r}, {treated!r})"
            )
        df[treatment_col] = (raw == treated).astype(float)

    covar_cols = [c for c in df.columns if c not in (outcome_col, treatment_col)]
    numeric = df[[outcome_col, treatment_col] + covar_cols].apply(
        pd.to_numeric, errors="coerce"
    )
    bad = ~np.isfinite(numeric.to_numpy(dtype=float))
    if bad.any():
        if drop_missing:
            keep = ~bad.any(axis=1)
            n_dropped = int((~keep).sum())
            numeric = numeric.loc[keep]
            if numeric.empty:
                raise DataError("all rows contain missing values")
            numeric.attrs["n_dropped"] = n_dropped
        else:
            i, j = np.argwhere(bad)[0]
            raise DataError(
                f"non-finite value at row {int(numeric.index[i]) + 2} "
                f"(1-based, counting the header), column {numeric.columns[j]!r}"
            )

    d = numeric[treatment_col].to_numpy(dtype=float)
    if not np.isin(d, (0.0, 1.0)).all():
        bad_vals = sorted(set(d[~np.isin(d, (0.0, 1.0))]))
        raise ValidationError(
            f"treatment column {treatment_col!r} must contain only 0/1, "
            f"found {bad_vals}; use treatment_labels to map two labels"
        )
    ds = Dataset(
        y=numeric[outcome_col].to_numpy(dtype=float),
        d=d,
        x=numeric[covar_cols].to_numpy(dtype=float),
        names=tuple(covar_cols),
    )
    return ds


def standardize(ds: Dataset) -> tuple[Dataset, Scaler]:
    """Center covariate columns to mean 0 and scale to SD 1.

    The outcome and treatment are left untouched.  Raises
    :class:`DegenerateColumnError` for constant columns.
    """
    mean = ds.x.mean(axis=0)
    sd = ds.x.std(axis=0, ddof=0)
    zero = np.flatnonzero(sd <= 0)
    if zero.size:
        raise DegenerateColumnError(
            f"constant covariate column(s): {[ds.names[j] for j in zero]}"
        )
    scaler = Scaler(mean=mean, sd=sd, names=ds.names)
    return Dataset(ds.y, ds.d, scaler.transform(ds.x), ds.names), scaler


def unstandardize(ds: Dataset, scaler: Scaler) -> Dataset:
    """Inverse of :func:`standardize` for the same scaler."""
    return Dataset(ds.y, ds.d, scaler.inverse(ds.x), ds.names)
