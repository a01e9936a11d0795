"""Subgroup profiling: who are the units with a significant indirect effect?

Splits the units of an effect table into significant / non-significant
groups and contrasts every covariate between them: standardized mean
difference (Cohen's d) for continuous covariates, odds ratio with a Woolf
interval for binary ones.  Zero cells get the Haldane-Anscombe 0.5
correction and are flagged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .core_model import CONTINUOUS, Dataset
from .errors import DimensionMismatch, GroupEmpty
from .mediation import EffectTable


@dataclass(frozen=True)
class SubgroupRow:
    """Contrast of one covariate between the two subgroups."""

    name: str
    kind: str
    statistic: str  # "cohens_d" or "odds_ratio"
    estimate: float
    ci_lo: float
    ci_hi: float
    significant: bool
    zero_cell: bool = False


@dataclass(frozen=True)
class SubgroupReport:
    rows: tuple[SubgroupRow, ...]
    n_significant: int
    n_nonsignificant: int
    level: float


def _cohens_d(x1: np.ndarray, x2: np.ndarray, zcrit: float) -> tuple[float, float, float]:
    n1, n2 = x1.size, x2.size
    pooled_var = ((n1 - 1) * np.var(x1, ddof=1) + (n2 - 1) * np.var(x2, ddof=1)) / (n1 + n2 - 2)
    pooled_sd = math.sqrt(max(pooled_var, 0.0))
    d = (float(np.mean(x1)) - float(np.mean(x2))) / pooled_sd if pooled_sd > 0 else 0.0
    se = math.sqrt(1.0 / n1 + 1.0 / n2 + d * d / (2.0 * (n1 + n2)))
    return d, d - zcrit * se, d + zcrit * se


def _odds_ratio(
    exposed_sig: float, exposed_non: float, unexposed_sig: float, unexposed_non: float, zcrit: float
) -> tuple[float, float, float, bool]:
    cells = np.array([exposed_sig, exposed_non, unexposed_sig, unexposed_non], dtype=float)
    zero_cell = bool(np.any(cells == 0.0))
    if zero_cell:
        cells = cells + 0.5
    a, b, c, d = cells
    log_or = math.log((a * d) / (b * c))
    se = math.sqrt(np.sum(1.0 / cells))
    return math.exp(log_or), math.exp(log_or - zcrit * se), math.exp(log_or + zcrit * se), zero_cell


def subgroup_report(effects: EffectTable, d: Dataset, level: float = 0.95) -> SubgroupReport:
    """Contrast covariates between significant- and non-significant-cAIE units.

    ``effects`` rows index into ``d`` via their row ids (compute them for
    the intervention arm for the usual display).  Raises
    :class:`GroupEmpty` when either subgroup has fewer than two members.
    """
    if effects.n == 0 or np.max(effects.row_id) >= d.n:
        raise DimensionMismatch("effect table rows do not index into the dataset")
    sig = effects.significant_caie
    n_sig = int(np.sum(sig))
    n_non = int(np.sum(~sig))
    if n_sig < 2 or n_non < 2:
        raise GroupEmpty(
            f"both subgroups need at least two members (significant={n_sig}, other={n_non})"
        )
    zcrit = norm.ppf(0.5 + level / 2.0)
    z = d.z[effects.row_id]

    rows = []
    for j in range(1, d.p):
        col = z[:, j]
        name = d.covariate_names[j]
        kind = d.covariate_kind[j]
        if kind == CONTINUOUS:
            est, lo, hi = _cohens_d(col[sig], col[~sig], zcrit)
            rows.append(
                SubgroupRow(
                    name=name,
                    kind=kind,
                    statistic="cohens_d",
                    estimate=est,
                    ci_lo=lo,
                    ci_hi=hi,
                    significant=bool(lo > 0.0 or hi < 0.0),
                )
            )
        else:
            exposed = col == np.max(col)
            est, lo, hi, zero_cell = _odds_ratio(
                float(np.sum(exposed & sig)),
                float(np.sum(exposed & ~sig)),
                float(np.sum(~exposed & sig)),
                float(np.sum(~exposed & ~sig)),
                zcrit,
            )
            rows.append(
                SubgroupRow(
                    name=name,
                    kind=kind,
                    statistic="odds_ratio",
                    estimate=est,
                    ci_lo=lo,
                    ci_hi=hi,
                    significant=bool(lo > 1.0 or hi < 1.0),
                    zero_cell=zero_cell,
                )
            )
    return SubgroupReport(
        rows=tuple(rows), n_significant=n_sig, n_nonsignificant=n_non, level=level
    )
