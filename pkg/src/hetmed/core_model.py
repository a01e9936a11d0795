"""Shared data model: validated datasets, structural coefficients, joint design.

Conventions used throughout the package:

* ``Z`` is the n x p covariate matrix whose first column is identically 1
  (the intercept); ``p`` counts the intercept.
* ``T`` is coded -1/+1 with +1 the designated intervention arm.
* The joint design stacks ``X = [Z | U | M | V]`` with ``U = T * Z`` row-wise
  and ``V = T * M``, and ``O = [M | Y]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    ArmEmpty,
    DimensionMismatch,
    InvalidConfig,
    MissingColumn,
    NonBinaryTreatment,
    NonFiniteValue,
)

CONTINUOUS = "continuous"
BINARY = "binary"

INTERCEPT_NAME = "intercept"


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dataset:
    """Validated observational data (Z, T, M, Y).

    Construct via :func:`validate_dataset` or :func:`dataset_from_arrays`;
    the constructor itself performs no checks.  Immutable and safe to share
    across workers.
    """

    z: np.ndarray
    t: np.ndarray
    m: np.ndarray
    y: np.ndarray
    covariate_names: tuple[str, ...]
    covariate_kind: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "z", _frozen(self.z))
        object.__setattr__(self, "t", _frozen(self.t))
        object.__setattr__(self, "m", _frozen(self.m))
        object.__setattr__(self, "y", _frozen(self.y))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        object.__setattr__(self, "covariate_kind", tuple(self.covariate_kind))

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def p(self) -> int:
        """Number of covariate columns, intercept included."""
        return self.z.shape[1]

    @property
    def n_treated(self) -> int:
        return int(np.sum(self.t == 1.0))

    @property
    def n_control(self) -> int:
        return int(np.sum(self.t == -1.0))

    def subset(self, rows: np.ndarray) -> "Dataset":
        """Row subset (used by sample splitting); keeps column metadata."""
        rows = np.asarray(rows)
        return Dataset(
            z=self.z[rows],
            t=self.t[rows],
            m=self.m[rows],
            y=self.y[rows],
            covariate_names=self.covariate_names,
            covariate_kind=self.covariate_kind,
        )

    def select_covariates(self, mask: np.ndarray) -> "Dataset":
        """Column subset of Z; the intercept column must stay selected."""
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (self.p,) or not mask[0]:
            raise DimensionMismatch(
                f"covariate mask must have length {self.p} and keep column 0"
            )
        return Dataset(
            z=self.z[:, mask],
            t=self.t,
            m=self.m,
            y=self.y,
            covariate_names=tuple(np.array(self.covariate_names)[mask]),
            covariate_kind=tuple(np.array(self.covariate_kind)[mask]),
        )


@dataclass(frozen=True)
class ThetaParams:
    """Structural coefficients of the mediator and outcome equations."""

    alpha0: np.ndarray
    alpha1: np.ndarray
    gamma0: np.ndarray
    gamma1: np.ndarray
    beta0: float
    beta1: float

    def __post_init__(self):
        for name in ("alpha0", "alpha1", "gamma0", "gamma1"):
            v = _frozen(np.atleast_1d(getattr(self, name)))
            if not np.all(np.isfinite(v)):
                raise NonFiniteValue(f"ThetaParams.{name} contains non-finite entries")
            object.__setattr__(self, name, v)
        for name in ("beta0", "beta1"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise NonFiniteValue(f"ThetaParams.{name} is non-finite")
            object.__setattr__(self, name, v)
        p = self.alpha0.shape[0]
        for name in ("alpha1", "gamma0", "gamma1"):
            if getattr(self, name).shape[0] != p:
                raise DimensionMismatch("ThetaParams coefficient vectors disagree in length")

    @property
    def p(self) -> int:
        return self.alpha0.shape[0]


@dataclass(frozen=True)
class JointDesign:
    """Joint regression design X = [Z U M V] with responses O = [M Y]."""

    x: np.ndarray
    o: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(self.x))
        object.__setattr__(self, "o", _frozen(self.o))


def _check_invariants(d: Dataset) -> Dataset:
    z, t, m, y = d.z, d.t, d.m, d.y
    n = z.shape[0]
    if z.ndim != 2 or t.shape != (n,) or m.shape != (n,) or y.shape != (n,):
        raise DimensionMismatch("Z, T, M, Y shapes are inconsistent")
    if len(d.covariate_names) != d.p or len(d.covariate_kind) != d.p:
        raise DimensionMismatch("covariate metadata length differs from Z columns")
    if not np.all(z[:, 0] == 1.0):
        raise InvalidConfig("first column of Z must be identically 1")
    for label, arr in (("Z", z), ("M", m), ("Y", y)):
        bad = ~np.isfinite(arr)
        if bad.any():
            row = int(np.argwhere(bad)[0][0])
            raise NonFiniteValue(f"non-finite value in {label} at row {row}")
    levels = np.unique(t)
    if not np.array_equal(levels, [-1.0, 1.0]):
        if levels.size == 1 and levels[0] in (-1.0, 1.0):
            raise ArmEmpty("one treatment arm has no units")
        raise NonBinaryTreatment(f"T must take values in {{-1,+1}}, found {levels}")
    if n < 4:
        raise ArmEmpty(f"need n >= 4 observations, got {n}")
    if d.n_treated < 2 or d.n_control < 2:
        raise ArmEmpty(
            f"each arm needs at least two units (treated={d.n_treated}, control={d.n_control})"
        )
    return d


def dataset_from_arrays(
    z: np.ndarray,
    t: np.ndarray,
    m: np.ndarray,
    y: np.ndarray,
    covariate_names: Sequence[str] | None = None,
    covariate_kind: Sequence[str] | None = None,
) -> Dataset:
    """Build a Dataset from numeric arrays already in canonical coding."""
    z = np.asarray(z, dtype=float)
    if covariate_names is None:
        covariate_names = [INTERCEPT_NAME] + [f"z{j}" for j in range(1, z.shape[1])]
    if covariate_kind is None:
        covariate_kind = [_infer_kind(z[:, j]) for j in range(z.shape[1])]
    d = Dataset(
        z=z,
        t=np.asarray(t, dtype=float),
        m=np.asarray(m, dtype=float),
        y=np.asarray(y, dtype=float),
        covariate_names=tuple(covariate_names),
        covariate_kind=tuple(covariate_kind),
    )
    return _check_invariants(d)


def _infer_kind(col: np.ndarray) -> str:
    vals = np.unique(col[np.isfinite(col)])
    return BINARY if vals.size == 2 else CONTINUOUS


def validate_dataset(
    raw: pd.DataFrame | Dataset,
    treatment_column: str = "T",
    mediator_column: str = "M",
    outcome_column: str = "Y",
    intervention_level=None,
    covariate_columns: Sequence[str] | None = None,
    kind_overrides: Mapping[str, str] | None = None,
    standardize: bool = False,
) -> Dataset:
    """Validate a tabular record set and return a canonical :class:`Dataset`.

    Treatment levels are recoded to -1/+1 with +1 the designated
    intervention level; an intercept column of ones is prepended when the
    covariate block lacks a constant-one column.  Binary/continuous kinds
    are inferred (exactly two distinct values -> binary) unless overridden.

    Parameters
    ----------
    raw : pandas.DataFrame or Dataset
        Input table.  Passing an already-validated Dataset is a no-op
        (invariants are re-checked, nothing is recoded).
    intervention_level :
        Which treatment level maps to +1.  Defaults to the natural choice
        for {-1,+1}, {0,1} and {False,True}; required otherwise.
    covariate_columns
        Explicit covariate subset; default is every remaining column.
    kind_overrides
        Mapping from covariate name to "continuous"/"binary".
    standardize
        If True, non-intercept continuous columns are centered and scaled
        to unit standard deviation.  Off by default: the penalized
        estimator is scale-sensitive and simulation reproduction needs raw
        scale.
    """
    if isinstance(raw, Dataset):
        d = _check_invariants(raw)
        return standardize_continuous(d) if standardize else d

    if not isinstance(raw, pd.DataFrame):
        raise InvalidConfig(f"expected a pandas DataFrame or Dataset, got {type(raw)!r}")

    for col in (treatment_column, mediator_column, outcome_column):
        if col not in raw.columns:
            raise MissingColumn(f"column {col!r} not found in input")
    if covariate_columns is None:
        covariate_columns = [
            c
            for c in raw.columns
            if c not in (treatment_column, mediator_column, outcome_column)
        ]
    else:
        for c in covariate_columns:
            if c not in raw.columns:
                raise MissingColumn(f"covariate column {c!r} not found in input")

    t = _recode_treatment(raw[treatment_column], intervention_level)
    m = _numeric_column(raw[mediator_column], mediator_column)
    y = _numeric_column(raw[outcome_column], outcome_column)

    cols = [_numeric_column(raw[c], c) for c in covariate_columns]
    names = list(covariate_columns)
    if cols:
        z_block = np.column_stack(cols)
    else:
        z_block = np.empty((len(raw), 0))

    # Prepend the intercept unless a constant-one column is already present.
    has_ones = any(np.all(z_block[:, j] == 1.0) for j in range(z_block.shape[1]))
    if not has_ones:
        z = np.column_stack([np.ones(len(raw)), z_block])
        names = [INTERCEPT_NAME] + names
    else:
        # Move the ones column to the front if it is not there already.
        j_ones = next(j for j in range(z_block.shape[1]) if np.all(z_block[:, j] == 1.0))
        order = [j_ones] + [j for j in range(z_block.shape[1]) if j != j_ones]
        z = z_block[:, order]
        names = [names[j] for j in order]

    kinds = [_infer_kind(z[:, j]) for j in range(z.shape[1])]
    if kind_overrides:
        for cname, kind in kind_overrides.items():
            if kind not in (CONTINUOUS, BINARY):
                raise InvalidConfig(f"unknown covariate kind {kind!r} for {cname!r}")
            if cname not in names:
                raise MissingColumn(f"kind override names unknown covariate {cname!r}")
            kinds[names.index(cname)] = kind

    d = dataset_from_arrays(z, t, m, y, names, kinds)
    return standardize_continuous(d) if standardize else d


def _numeric_column(series: pd.Series, name: str) -> np.ndarray:
    vals = pd.to_numeric(series, errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(vals)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        raise NonFiniteValue(f"non-finite or missing value in column {name!r} at row {row}")
    return vals


def _recode_treatment(series: pd.Series, intervention_level) -> np.ndarray:
    vals = series.to_numpy()
    levels = pd.unique(series)
    if len(levels) != 2:
        raise NonBinaryTreatment(
            f"treatment column must take exactly two levels, found {list(levels)!r}"
        )
    if intervention_level is None:
        lv = set(levels.tolist())
        for candidate in ({-1, 1}, {0, 1}, {False, True}, {-1.0, 1.0}, {0.0, 1.0}):
            if lv == candidate:
                intervention_level = max(candidate)
                break
        else:
            raise NonBinaryTreatment(
                f"cannot infer the intervention level from {sorted(map(str, lv))}; "
                "pass intervention_level explicitly"
            )
    if intervention_level not in set(levels.tolist()):
        raise NonBinaryTreatment(
            f"intervention level {intervention_level!r} not among treatment levels {list(levels)!r}"
        )
    return np.where(vals == intervention_level, 1.0, -1.0)


def standardize_continuous(d: Dataset) -> Dataset:
    """Center/scale non-intercept continuous columns to mean 0, sd 1."""
    z = np.array(d.z, copy=True)
    for j in range(1, d.p):
        if d.covariate_kind[j] == CONTINUOUS:
            mu = z[:, j].mean()
            sd = z[:, j].std(ddof=0)
            if sd > 0:
                z[:, j] = (z[:, j] - mu) / sd
            else:
                z[:, j] = z[:, j] - mu
    return Dataset(
        z=z,
        t=d.t,
        m=d.m,
        y=d.y,
        covariate_names=d.covariate_names,
        covariate_kind=d.covariate_kind,
    )


def load_table(path) -> pd.DataFrame:
    """Read a CSV file (header row required, UTF-8, '.' decimal).

    Empty cells and the string "NA" become NaN here and are rejected later
    by :func:`validate_dataset` with the offending column/row named.
    """
    return pd.read_csv(path, encoding="utf-8", na_values=["NA"], keep_default_na=True)


def build_joint_design(d: Dataset) -> JointDesign:
    """Assemble X = [Z U M V], O = [M Y] with U = T*Z and V = T*M."""
    u = d.t[:, None] * d.z
    v = d.t * d.m
    x = np.column_stack([d.z, u, d.m, v])
    o = np.column_stack([d.m, d.y])
    return JointDesign(x=x, o=o)
