"""Inference for heterogeneous mediation effects.

Two routes:

* Plug-in Wald intervals from the joint-design asymptotics: the error
  scale matrix is diagonal (mediator and outcome noise), the design scale
  is ``Q_X = X'X/n`` for the outcome equation and its ``[Z U]`` sub-block
  for the mediator equation, and the effect gradients are combined by the
  delta method.
* Multiple sample splitting for the penalized pipeline: each of B random
  half-splits selects a support on one half (Cp-tuned penalized fit),
  ridge-refits on the other half, and evaluates per-unit effects on the
  full dataset; per-unit point estimates are medians across splits and
  intervals are empirical quantiles.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import norm

from .core_model import Dataset, ThetaParams, build_joint_design, _frozen
from .errors import InvalidConfig, SingularDesign, SplitDegenerate, Underdetermined
from .mediation import cade, caie
from .solvers import (
    SolverOptions,
    default_ridge_eps,
    fit_ridge,
    support_from_fit,
    tune_cp,
)
from .stacker import MEDIATOR, OUTCOME, phi_pair_from_stacked, stack_model

COND_LIMIT = 1e12


@dataclass(frozen=True)
class AsymptoticCovariance:
    """Plug-in pieces of the joint-design sandwich.

    ``qx_inv`` inverts the full 2p+2 design scale; ``qw_inv`` inverts its
    leading 2p sub-block, which is the design scale actually seen by the
    mediator equation (whose regressors are ``[Z U]`` only).
    """

    qx_inv: np.ndarray
    qw_inv: np.ndarray
    sigma_m2: float
    sigma_y2: float
    n: int

    def __post_init__(self):
        object.__setattr__(self, "qx_inv", _frozen(self.qx_inv))
        object.__setattr__(self, "qw_inv", _frozen(self.qw_inv))


def estimate_covariance(d: Dataset, theta: ThetaParams) -> AsymptoticCovariance:
    """Estimate the design scale and noise variances from residuals.

    Residual variances use degrees-of-freedom corrected denominators
    (n - 2p for the mediator equation, n - 2p - 2 for the outcome one).
    """
    p = d.p
    jd = build_joint_design(d)
    n, k = jd.x.shape
    if n <= k:
        raise Underdetermined(f"covariance estimation needs n > 2p+2 (n={n}, 2p+2={k})")
    qx = jd.x.T @ jd.x / n
    cond = np.linalg.cond(qx)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularDesign(f"joint design condition number {cond:.3e} exceeds 1e12")
    qx_inv = np.linalg.inv(qx)
    qx_inv = (qx_inv + qx_inv.T) / 2.0
    if np.linalg.eigvalsh(qx_inv)[0] <= 0.0:
        raise SingularDesign("inverse design scale is not positive definite")
    qw = qx[: 2 * p, : 2 * p]
    qw_inv = np.linalg.inv(qw)
    qw_inv = (qw_inv + qw_inv.T) / 2.0

    u = d.t[:, None] * d.z
    resid_m = d.m - d.z @ theta.alpha0 - u @ theta.alpha1
    resid_y = (
        d.y
        - d.z @ theta.gamma0
        - u @ theta.gamma1
        - theta.beta0 * d.m
        - theta.beta1 * (d.t * d.m)
    )
    sigma_m2 = float(resid_m @ resid_m) / max(n - 2 * p, 1)
    sigma_y2 = float(resid_y @ resid_y) / max(n - 2 * p - 2, 1)
    return AsymptoticCovariance(
        qx_inv=qx_inv, qw_inv=qw_inv, sigma_m2=sigma_m2, sigma_y2=sigma_y2, n=n
    )


@dataclass(frozen=True)
class WaldEffects:
    """Vectorized Wald results for a batch of covariate profiles."""

    caie: np.ndarray
    caie_se: np.ndarray
    caie_lo: np.ndarray
    caie_hi: np.ndarray
    cade: np.ndarray
    cade_se: np.ndarray
    cade_lo: np.ndarray
    cade_hi: np.ndarray


class WaldCI(NamedTuple):
    caie: float
    caie_se: float
    caie_ci: tuple[float, float]
    cade: float
    cade_se: float
    cade_ci: tuple[float, float]


def wald_effects(
    theta: ThetaParams,
    cov: AsymptoticCovariance,
    z: np.ndarray,
    t: int,
    level: float = 0.95,
) -> WaldEffects:
    """Delta-method Wald intervals for cAIE and cADE at profiles ``z``.

    The variance splits across the two (asymptotically uncorrelated)
    equations: mediator-equation gradient terms are scaled by the
    mediator-equation design inverse, outcome-equation terms by the full
    joint-design inverse.
    """
    if not 0.0 < level < 1.0:
        raise InvalidConfig(f"confidence level must be in (0,1), got {level}")
    t = float(t)
    if t not in (-1.0, 1.0):
        raise InvalidConfig(f"treatment arm must be -1 or +1, got {t}")
    z2 = np.atleast_2d(np.asarray(z, dtype=float))
    p = theta.p
    n = cov.n
    zcrit = norm.ppf(0.5 + level / 2.0)

    a1z = z2 @ theta.alpha1
    a0z = z2 @ theta.alpha0
    caie_vals = 2.0 * (theta.beta0 + theta.beta1 * t) * a1z
    cade_vals = 2.0 * (z2 @ theta.gamma1) + 2.0 * theta.beta1 * (a0z + a1z * t)

    # Blocks of the inverses (coefficient order: main p, interaction p,
    # then mediator level and mediator-arm slots in the joint design).
    w00 = cov.qw_inv[:p, :p]
    w01 = cov.qw_inv[:p, p:]
    w11 = cov.qw_inv[p:, p:]
    g11 = cov.qx_inv[p : 2 * p, p : 2 * p]
    g1b1 = cov.qx_inv[p : 2 * p, 2 * p + 1]
    b_block = cov.qx_inv[np.ix_([2 * p, 2 * p + 1], [2 * p, 2 * p + 1])]

    def quad(mat: np.ndarray) -> np.ndarray:
        return np.einsum("ij,jk,ik->i", z2, mat, z2)

    # cAIE: mediator part hits the interaction block only; outcome part
    # hits the two mediator-coefficient slots.
    med1 = (2.0 * (theta.beta0 + theta.beta1 * t)) ** 2 * quad(w11)
    hb = np.stack([2.0 * a1z, 2.0 * t * a1z], axis=1)
    out1 = np.einsum("ij,jk,ik->i", hb, b_block, hb)
    var_caie = (cov.sigma_m2 * med1 + cov.sigma_y2 * out1) / n

    # cADE: mediator part hits both blocks through 2*b1*(z, t z); outcome
    # part hits the interaction block and the mediator-arm slot.
    med2 = (2.0 * theta.beta1) ** 2 * (quad(w00) + 2.0 * t * quad(w01) + quad(w11))
    cvec = 2.0 * (a0z + a1z * t)
    zg = z2 @ g1b1
    out2 = 4.0 * quad(g11) + 2.0 * (2.0 * zg) * cvec + cvec**2 * b_block[1, 1]
    var_cade = (cov.sigma_m2 * med2 + cov.sigma_y2 * out2) / n

    se1 = np.sqrt(np.maximum(var_caie, 0.0))
    se2 = np.sqrt(np.maximum(var_cade, 0.0))
    return WaldEffects(
        caie=caie_vals,
        caie_se=se1,
        caie_lo=caie_vals - zcrit * se1,
        caie_hi=caie_vals + zcrit * se1,
        cade=cade_vals,
        cade_se=se2,
        cade_lo=cade_vals - zcrit * se2,
        cade_hi=cade_vals + zcrit * se2,
    )


def wald_ci(
    theta: ThetaParams,
    cov: AsymptoticCovariance,
    z: np.ndarray,
    t: int,
    level: float = 0.95,
) -> WaldCI:
    """Point estimates, standard errors and Wald intervals at one profile."""
    w = wald_effects(theta, cov, np.atleast_2d(z), t, level)
    return WaldCI(
        caie=float(w.caie[0]),
        caie_se=float(w.caie_se[0]),
        caie_ci=(float(w.caie_lo[0]), float(w.caie_hi[0])),
        cade=float(w.cade[0]),
        cade_se=float(w.cade_se[0]),
        cade_ci=(float(w.cade_lo[0]), float(w.cade_hi[0])),
    )


# ----------------------------------------------------------------------
# Multiple sample splitting
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class SplitInference:
    """Aggregated results of B selection/refit half-splits."""

    B: int
    seed: int
    level: float
    t: int
    caie_draws: np.ndarray
    cade_draws: np.ndarray
    caie_est: np.ndarray
    caie_lo: np.ndarray
    caie_hi: np.ndarray
    cade_est: np.ndarray
    cade_lo: np.ndarray
    cade_hi: np.ndarray
    selection_frequency: np.ndarray


def _stratified_half_split(d: Dataset, rng: np.random.Generator):
    """Random half-split preserving both arms; odd arm counts favor D1."""
    idx1 = np.flatnonzero(d.t == 1.0)
    idx0 = np.flatnonzero(d.t == -1.0)
    perm1 = rng.permutation(idx1)
    perm0 = rng.permutation(idx0)
    k1 = (idx1.size + 1) // 2
    k0 = (idx0.size + 1) // 2
    first = np.sort(np.concatenate([perm1[:k1], perm0[:k0]]))
    second = np.sort(np.concatenate([perm1[k1:], perm0[k0:]]))
    return first, second


def select_and_refit(
    d_select: Dataset,
    d_refit: Dataset,
    opts: SolverOptions | None = None,
) -> tuple[ThetaParams, np.ndarray]:
    """Cp-tuned support selection on one dataset, ridge refit on another.

    Intercepts are always kept; the mediator column is always kept in the
    outcome model.  Returns full-length coefficients (zeros off-support)
    and the union support mask over covariates.
    """
    opts = opts or SolverOptions()
    p = d_select.p

    fit_m, _ = tune_cp(stack_model(d_select, MEDIATOR), opts=opts)
    sel_m = support_from_fit(fit_m, p)

    fit_o, _ = tune_cp(stack_model(d_select, OUTCOME), opts=opts)
    sel_o_full = support_from_fit(fit_o, p + 1)
    sel_o = sel_o_full[:p]
    sel_o[0] = True

    sd_m = stack_model(d_refit.select_covariates(sel_m), MEDIATOR)
    eps = opts.ridge_eps if opts.ridge_eps is not None else default_ridge_eps(sd_m)
    refit_m = fit_ridge(sd_m, eps)
    pair_m = phi_pair_from_stacked(refit_m.phi, sd_m.q)

    sd_o = stack_model(d_refit.select_covariates(sel_o), OUTCOME)
    eps_o = opts.ridge_eps if opts.ridge_eps is not None else default_ridge_eps(sd_o)
    refit_o = fit_ridge(sd_o, eps_o)
    pair_o = phi_pair_from_stacked(refit_o.phi, sd_o.q)

    alpha0 = np.zeros(p)
    alpha1 = np.zeros(p)
    alpha0[sel_m] = pair_m.phi0
    alpha1[sel_m] = pair_m.phi1
    gamma0 = np.zeros(p)
    gamma1 = np.zeros(p)
    gamma0[sel_o] = pair_o.phi0[:-1]
    gamma1[sel_o] = pair_o.phi1[:-1]
    theta = ThetaParams(
        alpha0=alpha0,
        alpha1=alpha1,
        gamma0=gamma0,
        gamma1=gamma1,
        beta0=float(pair_o.phi0[-1]),
        beta1=float(pair_o.phi1[-1]),
    )
    return theta, sel_m | sel_o


def _one_split(d: Dataset, entropy, opts: SolverOptions, t: int):
    rng = np.random.default_rng(np.random.SeedSequence(entropy))
    for _ in range(100):
        first, second = _stratified_half_split(d, rng)
        t1 = d.t[first]
        t2 = d.t[second]
        if (t1 == 1).any() and (t1 == -1).any() and (t2 == 1).any() and (t2 == -1).any():
            break
    else:
        raise SplitDegenerate("could not produce a half-split with both arms present")
    theta, selected = select_and_refit(d.subset(first), d.subset(second), opts)
    return caie(theta, d.z, t), cade(theta, d.z, t), selected


def split_inference(
    d: Dataset,
    B: int,
    seed: int,
    opts: SolverOptions | None = None,
    level: float = 0.95,
    t: int = 1,
    n_jobs: int = 1,
    split_seeds: Sequence | None = None,
) -> SplitInference:
    """Multiple sample-splitting inference for the penalized pipeline.

    Per-split RNG streams derive deterministically from ``(seed, b)``, so
    the result does not depend on scheduling.  ``split_seeds`` overrides
    the per-split entropy (for reproducibility debugging).
    """
    opts = opts or SolverOptions()
    if B < 2:
        raise InvalidConfig(f"need at least B=2 splits, got {B}")
    if d.n < 8:
        raise InvalidConfig(f"sample splitting needs n >= 8, got n={d.n}")
    if not 0.0 < level < 1.0:
        raise InvalidConfig(f"confidence level must be in (0,1), got {level}")
    entropies = list(split_seeds) if split_seeds is not None else [(seed, b) for b in range(B)]
    if len(entropies) != B:
        raise InvalidConfig("split_seeds must have length B")

    if n_jobs == 1:
        results = [_one_split(d, e, opts, t) for e in entropies]
    else:
        results = Parallel(n_jobs=n_jobs)(delayed(_one_split)(d, e, opts, t) for e in entropies)

    caie_draws = np.stack([r[0] for r in results])
    cade_draws = np.stack([r[1] for r in results])
    selected = np.stack([r[2] for r in results])
    alpha = (1.0 - level) / 2.0
    # Each draw is refit on a half sample, so the draw spread carries
    # roughly twice the aggregated estimator's variance.  The interval is
    # the empirical quantile band shrunk toward the median by the
    # subsampling factor sqrt(m/n) with m the refit-half size; without the
    # rescaling the intervals overcover markedly (~99% at nominal 95%).
    m_refit = int(np.sum(d.t == 1.0)) // 2 + int(np.sum(d.t == -1.0)) // 2
    shrink = np.sqrt(m_refit / d.n)
    caie_est = np.median(caie_draws, axis=0)
    cade_est = np.median(cade_draws, axis=0)
    caie_q = np.quantile(caie_draws, [alpha, 1.0 - alpha], axis=0)
    cade_q = np.quantile(cade_draws, [alpha, 1.0 - alpha], axis=0)
    return SplitInference(
        B=B,
        seed=seed,
        level=level,
        t=int(t),
        caie_draws=caie_draws,
        cade_draws=cade_draws,
        caie_est=caie_est,
        caie_lo=caie_est + shrink * (caie_q[0] - caie_est),
        caie_hi=caie_est + shrink * (caie_q[1] - caie_est),
        cade_est=cade_est,
        cade_lo=cade_est + shrink * (cade_q[0] - cade_est),
        cade_hi=cade_est + shrink * (cade_q[1] - cade_est),
        selection_frequency=selected.mean(axis=0),
    )
