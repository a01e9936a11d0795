"""Closed-form heterogeneous effects: total, indirect (cAIE), direct (cADE).

With mediator model ``M(t) = a0'z + a1'z t + eps`` and outcome model
``Y(t,m) = g0'z + g1'z t + b0 m + b1 m t + eta`` (treatment coded -1/+1):

* indirect effect at arm t:   ``2 (b0 + b1 t) a1'z``
* direct effect at arm t:     ``2 g1'z + 2 b1 (a0'z + a1'z t)``
* total effect:               ``2 g1'z + 2 b0 a1'z + 2 b1 a0'z``

and the decomposition ``tau = caie(t=1) + cade(t=-1) = caie(t=-1) + cade(t=1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_model import Dataset, ThetaParams, _frozen
from .errors import DimensionMismatch, InvalidConfig, LengthMismatch


@dataclass(frozen=True)
class EffectRequest:
    """A covariate profile and evaluation arm for effect computation.

    Enforces the intercept convention (first coordinate 1); the plain
    functions below also accept arbitrary profiles for what-if analyses.
    """

    z: np.ndarray
    t: int

    def __post_init__(self):
        z = _frozen(np.atleast_1d(self.z))
        if not np.all(np.isfinite(z)):
            raise InvalidConfig("effect request contains non-finite covariates")
        if z[0] != 1.0:
            raise InvalidConfig("covariate profile must start with the intercept 1")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "t", int(_check_t(self.t)))


def effects_at(theta: ThetaParams, request: EffectRequest) -> tuple[float, float, float]:
    """(indirect, direct, total) effects at one validated profile."""
    return (
        float(caie(theta, request.z, request.t)),
        float(cade(theta, request.z, request.t)),
        float(tau(theta, request.z)),
    )


def _check_z(theta: ThetaParams, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != theta.p:
        raise LengthMismatch(
            f"covariate vector has length {z.shape[-1]}, coefficients expect {theta.p}"
        )
    return z


def _check_t(t) -> float:
    t = float(t)
    if t not in (-1.0, 1.0):
        raise InvalidConfig(f"treatment arm must be -1 or +1, got {t}")
    return t


def caie(theta: ThetaParams, z: np.ndarray, t: int):
    """Conditional average indirect effect at arm t and profile(s) z."""
    z = _check_z(theta, z)
    t = _check_t(t)
    return 2.0 * (theta.beta0 + theta.beta1 * t) * (z @ theta.alpha1)


def cade(theta: ThetaParams, z: np.ndarray, t: int):
    """Conditional average direct effect at arm t and profile(s) z."""
    z = _check_z(theta, z)
    t = _check_t(t)
    return 2.0 * (z @ theta.gamma1) + 2.0 * theta.beta1 * (z @ theta.alpha0 + (z @ theta.alpha1) * t)


def tau(theta: ThetaParams, z: np.ndarray):
    """Conditional total treatment effect at profile(s) z."""
    z = _check_z(theta, z)
    return (
        2.0 * (z @ theta.gamma1)
        + 2.0 * theta.beta0 * (z @ theta.alpha1)
        + 2.0 * theta.beta1 * (z @ theta.alpha0)
    )


@dataclass(frozen=True)
class EffectTable:
    """Per-individual effect estimates, optionally with Wald intervals.

    ``eval_t`` is the arm at which caie/cade are evaluated; ``arm`` holds
    each unit's own assignment.  When no inference engine was supplied the
    SE/CI columns are NaN and no unit is flagged significant.
    """

    row_id: np.ndarray
    caie: np.ndarray
    cade: np.ndarray
    tau: np.ndarray
    se_caie: np.ndarray
    se_cade: np.ndarray
    caie_lo: np.ndarray
    caie_hi: np.ndarray
    cade_lo: np.ndarray
    cade_hi: np.ndarray
    significant_caie: np.ndarray
    arm: np.ndarray
    eval_t: int
    level: float
    has_inference: bool

    def __post_init__(self):
        ids = np.array(self.row_id, dtype=int, copy=True)
        ids.setflags(write=False)
        object.__setattr__(self, "row_id", ids)
        arm = np.array(self.arm, dtype=int, copy=True)
        arm.setflags(write=False)
        object.__setattr__(self, "arm", arm)
        sig = np.array(self.significant_caie, dtype=bool, copy=True)
        sig.setflags(write=False)
        object.__setattr__(self, "significant_caie", sig)
        for name in (
            "caie",
            "cade",
            "tau",
            "se_caie",
            "se_cade",
            "caie_lo",
            "caie_hi",
            "cade_lo",
            "cade_hi",
        ):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def n(self) -> int:
        return self.row_id.shape[0]


def population_average(
    theta: ThetaParams, d: Dataset, t: int, arm: int | None = None
) -> dict:
    """Mean effects over the units of one arm (or all units).

    These are model-based averages of the closed-form per-unit effects,
    not a standalone population-level estimator; by linearity they equal
    the effects evaluated at the group's mean covariate profile.
    """
    rows = slice(None) if arm is None else d.t == float(arm)
    z = d.z[rows]
    return {
        "kind": "model_based_average",
        "arm": arm,
        "eval_t": int(t),
        "n": int(z.shape[0]),
        "caie": float(np.mean(caie(theta, z, t))),
        "cade": float(np.mean(cade(theta, z, t))),
        "tau": float(np.mean(tau(theta, z))),
    }


def effect_table(
    theta: ThetaParams,
    d: Dataset,
    t: int,
    cov=None,
    level: float = 0.95,
    arm: int | None = None,
) -> EffectTable:
    """Evaluate effects at every unit's own covariate profile.

    Parameters
    ----------
    t : -1 or +1
        Arm at which the indirect/direct effects are evaluated.
    cov : AsymptoticCovariance, optional
        Wald inference engine; when omitted the SE/CI columns are NaN.
    arm : -1, +1 or None
        Restrict the table to units with this assignment.
    """
    if theta.p != d.p:
        raise DimensionMismatch(
            f"coefficients have length {theta.p} but the dataset has p={d.p}"
        )
    t = int(_check_t(t))
    rows = np.arange(d.n)
    if arm is not None:
        rows = rows[d.t == float(arm)]
    z = d.z[rows]

    caie_vals = caie(theta, z, t)
    cade_vals = cade(theta, z, t)
    tau_vals = tau(theta, z)

    n = rows.size
    if cov is not None:
        from .inference import wald_effects

        w = wald_effects(theta, cov, z, t, level)
        se1, lo1, hi1 = w.caie_se, w.caie_lo, w.caie_hi
        se2, lo2, hi2 = w.cade_se, w.cade_lo, w.cade_hi
        significant = (lo1 > 0.0) | (hi1 < 0.0)
        has_inference = True
    else:
        se1 = se2 = lo1 = hi1 = lo2 = hi2 = np.full(n, np.nan)
        significant = np.zeros(n, dtype=bool)
        has_inference = False

    return EffectTable(
        row_id=rows,
        caie=caie_vals,
        cade=cade_vals,
        tau=tau_vals,
        se_caie=se1,
        se_cade=se2,
        caie_lo=lo1,
        caie_hi=hi1,
        cade_lo=lo2,
        cade_hi=hi2,
        significant_caie=significant,
        arm=d.t[rows].astype(int),
        eval_t=t,
        level=level,
        has_inference=has_inference,
    )
