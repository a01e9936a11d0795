"""Desk-scale simulation harness: data generation, replication study, metrics.

The generator mirrors a randomized-trial mediation setting: half the
covariates standard normal, half Bernoulli(0.5), uniform random arms, and
sparse heterogeneous coefficients with magnitudes bounded away from zero.
The study runner replays (method, sample size) cells over fresh
replications and pools per-unit bias/MSE/interval metrics.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from joblib import Parallel, delayed

from .core_model import BINARY, CONTINUOUS, Dataset, ThetaParams, dataset_from_arrays
from .errors import InvalidConfig
from .inference import estimate_covariance, select_and_refit, split_inference, wald_effects
from .mediation import cade, caie
from .solvers import SolverOptions, fit_ols
from .stacker import MEDIATOR, OUTCOME, phi_pair_from_stacked, stack_model, theta_from_fits

OLS_METHOD = "ols"
GENLASSO_METHOD = "genlasso"
_METHOD_CODE = {OLS_METHOD: 0, GENLASSO_METHOD: 1}


@dataclass(frozen=True)
class DgpConfig:
    """Data-generating configuration.

    ``p`` counts real covariates; the generated design carries p+1 columns
    (intercept first).  ``sparsity`` is the fraction of zeroed entries per
    coefficient vector; the count of nonzero non-intercept entries is
    exactly ``round((1-sparsity)*p)``.  Nonzero coefficients are uniform on
    ``[-coef_high,-coef_low] U [coef_low, coef_high]``.
    """

    n: int
    p: int = 100
    n_continuous: int = 50
    n_binary: int = 50
    sparsity: float = 0.95
    noise_sd: float = 0.5
    beta0: float = 1.0
    beta1: float = 0.5
    coef_law: str = "uniform_signed"
    coef_low: float = 0.5
    coef_high: float = 1.5
    seed: int = 0

    def validate(self) -> "DgpConfig":
        if self.n_continuous + self.n_binary != self.p:
            raise InvalidConfig(
                f"n_continuous+n_binary must equal p "
                f"({self.n_continuous}+{self.n_binary} != {self.p})"
            )
        if not 0.0 <= self.sparsity < 1.0:
            raise InvalidConfig(f"sparsity must be in [0,1), got {self.sparsity}")
        if self.noise_sd <= 0.0:
            raise InvalidConfig(f"noise_sd must be positive, got {self.noise_sd}")
        if self.n < 4:
            raise InvalidConfig(f"need n >= 4, got {self.n}")
        if self.coef_law != "uniform_signed":
            raise InvalidConfig(f"unknown coef_law {self.coef_law!r}")
        if not 0.0 < self.coef_low <= self.coef_high:
            raise InvalidConfig("need 0 < coef_low <= coef_high")
        return self


@dataclass(frozen=True)
class TrueEffects:
    """Per-unit ground-truth effects at both evaluation arms."""

    caie_t1: np.ndarray
    caie_tm1: np.ndarray
    cade_t1: np.ndarray
    cade_tm1: np.ndarray


def _draw_coef(rng: np.random.Generator, cfg: DgpConfig, size: int) -> np.ndarray:
    mag = rng.uniform(cfg.coef_low, cfg.coef_high, size)
    sign = rng.choice([-1.0, 1.0], size)
    return mag * sign


def generate(cfg: DgpConfig, entropy=None) -> tuple[Dataset, ThetaParams, TrueEffects]:
    """Draw one dataset plus its generating coefficients and true effects."""
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence(entropy if entropy is not None else cfg.seed))
    n, p = cfg.n, cfg.p

    zc = rng.standard_normal((n, cfg.n_continuous))
    zb = rng.integers(0, 2, (n, cfg.n_binary)).astype(float)
    z = np.column_stack([np.ones(n), zc, zb])

    t = rng.integers(0, 2, n) * 2.0 - 1.0
    for _ in range(100):
        if (t == 1.0).sum() >= 2 and (t == -1.0).sum() >= 2:
            break
        t = rng.integers(0, 2, n) * 2.0 - 1.0
    else:
        raise InvalidConfig("could not draw a treatment vector with two units per arm")

    k = int(round((1.0 - cfg.sparsity) * p))
    coefs = {}
    for name in ("alpha0", "alpha1", "gamma0", "gamma1"):
        vec = np.zeros(p + 1)
        vec[0] = _draw_coef(rng, cfg, 1)[0]  # intercept never masked
        support = rng.choice(p, size=k, replace=False) + 1
        vec[support] = _draw_coef(rng, cfg, k)
        coefs[name] = vec
    theta = ThetaParams(
        alpha0=coefs["alpha0"],
        alpha1=coefs["alpha1"],
        gamma0=coefs["gamma0"],
        gamma1=coefs["gamma1"],
        beta0=cfg.beta0,
        beta1=cfg.beta1,
    )

    m = z @ theta.alpha0 + t * (z @ theta.alpha1) + rng.normal(0.0, cfg.noise_sd, n)
    y = (
        z @ theta.gamma0
        + t * (z @ theta.gamma1)
        + theta.beta0 * m
        + theta.beta1 * t * m
        + rng.normal(0.0, cfg.noise_sd, n)
    )

    names = (
        ["intercept"]
        + [f"x{j}" for j in range(1, cfg.n_continuous + 1)]
        + [f"b{j}" for j in range(1, cfg.n_binary + 1)]
    )
    kinds = [CONTINUOUS] * (cfg.n_continuous + 1) + [BINARY] * cfg.n_binary
    d = dataset_from_arrays(z, t, m, y, names, kinds)

    truth = TrueEffects(
        caie_t1=caie(theta, z, 1),
        caie_tm1=caie(theta, z, -1),
        cade_t1=cade(theta, z, 1),
        cade_tm1=cade(theta, z, -1),
    )
    return d, theta, truth


# ----------------------------------------------------------------------
# Replication study
# ----------------------------------------------------------------------


@dataclass
class EffectMetrics:
    """Pooled (unit, replication) metrics for one effect in one cell."""

    bias: float = float("nan")
    mse: float = float("nan")
    median_abs_err: float = float("nan")
    scaled_bias: float = float("nan")
    scaled_mse: float = float("nan")
    mean_ci_width: float = float("nan")
    coverage: float = float("nan")


@dataclass
class CellMetrics:
    method: str
    n: int
    feasible: bool
    replications: int = 0
    failures: int = 0
    caie: EffectMetrics = field(default_factory=EffectMetrics)
    cade: EffectMetrics = field(default_factory=EffectMetrics)
    seconds: float = 0.0


@dataclass
class SimReport:
    """Study-level summary; ``cells`` keyed by (method, n)."""

    methods: tuple[str, ...]
    ns: tuple[int, ...]
    replications: int
    B: int
    seed: int
    level: float
    genlasso_inference: str
    cells: dict = field(default_factory=dict)
    total_seconds: float = 0.0

    def to_json_dict(self, include_timing: bool = False) -> dict:
        """Canonical dict; timing excluded by default so reruns are byte-identical.

        Non-finite metrics (infeasible or interval-free cells) serialize as
        null for strict-JSON consumers.
        """

        def _num(x):
            return float(x) if np.isfinite(x) else None

        out = {
            "methods": list(self.methods),
            "ns": list(self.ns),
            "replications": self.replications,
            "B": self.B,
            "seed": self.seed,
            "level": self.level,
            "genlasso_inference": self.genlasso_inference,
            "cells": {},
        }
        for (method, n), cell in sorted(self.cells.items()):
            key = f"{method}_n{n}"
            entry = {
                "method": method,
                "n": n,
                "feasible": cell.feasible,
                "replications": cell.replications,
                "failures": cell.failures,
            }
            for eff_name in ("caie", "cade"):
                em = getattr(cell, eff_name)
                entry[eff_name] = {
                    "bias": _num(em.bias),
                    "mse": _num(em.mse),
                    "median_abs_err": _num(em.median_abs_err),
                    "scaled_bias": _num(em.scaled_bias),
                    "scaled_mse": _num(em.scaled_mse),
                    "mean_ci_width": _num(em.mean_ci_width),
                    "coverage": _num(em.coverage),
                }
            if include_timing:
                entry["seconds"] = cell.seconds
            out["cells"][key] = entry
        if include_timing:
            out["total_seconds"] = self.total_seconds
        return out

    def tidy_rows(self) -> list[dict]:
        """One row per method x n x effect x metric, for CSV emission."""
        rows = []
        for (method, n), cell in sorted(self.cells.items()):
            for eff_name in ("caie", "cade"):
                em = getattr(cell, eff_name)
                for metric in (
                    "bias",
                    "mse",
                    "median_abs_err",
                    "scaled_bias",
                    "scaled_mse",
                    "mean_ci_width",
                    "coverage",
                ):
                    rows.append(
                        {
                            "method": method,
                            "n": n,
                            "effect": eff_name,
                            "metric": metric,
                            "value": getattr(em, metric),
                            "feasible": cell.feasible,
                            "replications": cell.replications,
                            "failures": cell.failures,
                        }
                    )
        return rows


def ols_feasible(n: int, p_dataset: int) -> bool:
    """Strict feasibility for the unpenalized pipeline, outcome model included."""
    return n > 2 * (p_dataset + 1) + 2


def _fit_theta_ols(d: Dataset) -> ThetaParams:
    fm = fit_ols(stack_model(d, MEDIATOR))
    fo = fit_ols(stack_model(d, OUTCOME))
    return theta_from_fits(
        phi_pair_from_stacked(fm.phi, d.p), phi_pair_from_stacked(fo.phi, d.p + 1)
    )


def _run_replication(
    cfg: DgpConfig,
    method: str,
    n: int,
    r: int,
    B: int,
    level: float,
    genlasso_inference: str,
    opts: SolverOptions,
):
    """One replication; returns per-unit errors/widths/coverage indicators."""
    entropy = (cfg.seed, _METHOD_CODE[method], n, r)
    d, theta_star, truth = generate(replace(cfg, n=n), entropy=entropy)
    truth_caie = truth.caie_t1
    truth_cade = truth.cade_t1

    if method == OLS_METHOD:
        theta = _fit_theta_ols(d)
        cov = estimate_covariance(d, theta)
        w = wald_effects(theta, cov, d.z, 1, level)
        est_caie, lo1, hi1 = w.caie, w.caie_lo, w.caie_hi
        est_cade, lo2, hi2 = w.cade, w.cade_lo, w.cade_hi
    elif genlasso_inference == "split":
        seed_b = int(np.random.SeedSequence(entropy).generate_state(1)[0])
        si = split_inference(d, B=B, seed=seed_b, opts=opts, level=level, t=1)
        est_caie, lo1, hi1 = si.caie_est, si.caie_lo, si.caie_hi
        est_cade, lo2, hi2 = si.cade_est, si.cade_lo, si.cade_hi
    else:  # point estimates only: Cp-tuned selection plus ridge refit
        theta, _ = select_and_refit(d, d, opts)
        est_caie = caie(theta, d.z, 1)
        est_cade = cade(theta, d.z, 1)
        lo1 = hi1 = lo2 = hi2 = None

    out = {}
    for name, est, tru, lo, hi in (
        ("caie", est_caie, truth_caie, lo1, hi1),
        ("cade", est_cade, truth_cade, lo2, hi2),
    ):
        err = est - tru
        sd_truth = float(np.std(tru))
        entry = {
            "err": err,
            "sd_truth": sd_truth if sd_truth > 0 else float("nan"),
        }
        if lo is not None:
            entry["width"] = hi - lo
            entry["covered"] = (lo <= tru) & (tru <= hi)
        out[name] = entry
    return out


def _pool(entries: list[dict]) -> EffectMetrics:
    errs = np.concatenate([e["err"] for e in entries])
    em = EffectMetrics(
        bias=float(np.mean(errs)),
        mse=float(np.mean(errs**2)),
        median_abs_err=float(np.median(np.abs(errs))),
    )
    scaled_b = [np.mean(e["err"]) / e["sd_truth"] for e in entries if np.isfinite(e["sd_truth"])]
    scaled_m = [
        np.mean(e["err"] ** 2) / e["sd_truth"] ** 2
        for e in entries
        if np.isfinite(e["sd_truth"])
    ]
    if scaled_b:
        em.scaled_bias = float(np.mean(scaled_b))
        em.scaled_mse = float(np.mean(scaled_m))
    if "width" in entries[0]:
        em.mean_ci_width = float(np.mean(np.concatenate([e["width"] for e in entries])))
        em.coverage = float(np.mean(np.concatenate([e["covered"] for e in entries])))
    return em


def run_study(
    methods: Iterable[str],
    ns: Sequence[int],
    replications: int,
    cfg: DgpConfig,
    B: int = 500,
    level: float = 0.95,
    genlasso_inference: str = "split",
    opts: SolverOptions | None = None,
    n_jobs: int = 1,
) -> SimReport:
    """Run the (method x n x replication) grid and pool metrics.

    Unpenalized cells that are infeasible at their sample size are marked
    rather than run.  A replication whose fit raises is skipped and counted
    in the cell's failure tally.  The report is a pure function of the
    arguments.
    """
    cfg.validate()
    methods = sorted(set(methods))
    for mth in methods:
        if mth not in _METHOD_CODE:
            raise InvalidConfig(f"unknown method {mth!r}")
    if replications < 1:
        raise InvalidConfig(f"need at least one replication, got {replications}")
    if genlasso_inference not in ("split", "refit"):
        raise InvalidConfig(f"genlasso_inference must be 'split' or 'refit'")
    if GENLASSO_METHOD in methods and genlasso_inference == "split" and B < 2:
        raise InvalidConfig(f"splitting inference needs B >= 2, got {B}")
    opts = opts or SolverOptions()

    report = SimReport(
        methods=tuple(methods),
        ns=tuple(ns),
        replications=replications,
        B=B,
        seed=cfg.seed,
        level=level,
        genlasso_inference=genlasso_inference,
    )
    t_start = time.perf_counter()
    p_dataset = cfg.p + 1
    for method in methods:
        for n in ns:
            cell = CellMetrics(method=method, n=n, feasible=True)
            report.cells[(method, n)] = cell
            if method == OLS_METHOD and not ols_feasible(n, p_dataset):
                cell.feasible = False
                continue
            t0 = time.perf_counter()

            def _safe(r):
                try:
                    return _run_replication(
                        cfg, method, n, r, B, level, genlasso_inference, opts
                    )
                except Exception:
                    return None

            if n_jobs == 1:
                results = [_safe(r) for r in range(replications)]
            else:
                results = Parallel(n_jobs=n_jobs)(
                    delayed(_safe)(r) for r in range(replications)
                )
            ok = [res for res in results if res is not None]
            cell.failures = replications - len(ok)
            cell.replications = len(ok)
            if ok:
                cell.caie = _pool([res["caie"] for res in ok])
                cell.cade = _pool([res["cade"] for res in ok])
            cell.seconds = time.perf_counter() - t0
    report.total_seconds = time.perf_counter() - t_start
    return report
