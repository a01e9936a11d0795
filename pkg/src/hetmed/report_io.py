"""Deterministic file emission/ingestion for CLI reports.

All writers format floats with shortest round-trip ``repr`` and sort JSON
keys, so rerunning a command with the same seed produces byte-identical
files.  ``effects.csv`` round-trips back into an :class:`EffectTable`.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .core_model import ThetaParams
from .inference import SplitInference
from .mediation import EffectTable
from .profiling import SubgroupReport
from .simulation import SimReport


def _f(x) -> str:
    return repr(float(x))


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


# -- coefficients ------------------------------------------------------


def theta_to_dict(theta: ThetaParams, covariate_names) -> dict:
    return {
        "covariate_names": list(covariate_names),
        "alpha0": [float(v) for v in theta.alpha0],
        "alpha1": [float(v) for v in theta.alpha1],
        "gamma0": [float(v) for v in theta.gamma0],
        "gamma1": [float(v) for v in theta.gamma1],
        "beta0": float(theta.beta0),
        "beta1": float(theta.beta1),
    }


def theta_from_dict(obj: dict) -> tuple[ThetaParams, list[str]]:
    theta = ThetaParams(
        alpha0=np.array(obj["alpha0"], dtype=float),
        alpha1=np.array(obj["alpha1"], dtype=float),
        gamma0=np.array(obj["gamma0"], dtype=float),
        gamma1=np.array(obj["gamma1"], dtype=float),
        beta0=float(obj["beta0"]),
        beta1=float(obj["beta1"]),
    )
    return theta, list(obj.get("covariate_names", []))


# -- effect tables -----------------------------------------------------

_EFFECT_COLS = [
    "row_id",
    "arm",
    "caie",
    "cade",
    "tau",
    "se_caie",
    "se_cade",
    "caie_lo",
    "caie_hi",
    "cade_lo",
    "cade_hi",
    "significant_caie",
    "eval_t",
    "level",
]


def write_effects_csv(table: EffectTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_EFFECT_COLS)
        for i in range(table.n):
            writer.writerow(
                [
                    int(table.row_id[i]),
                    int(table.arm[i]),
                    _f(table.caie[i]),
                    _f(table.cade[i]),
                    _f(table.tau[i]),
                    _f(table.se_caie[i]),
                    _f(table.se_cade[i]),
                    _f(table.caie_lo[i]),
                    _f(table.caie_hi[i]),
                    _f(table.cade_lo[i]),
                    _f(table.cade_hi[i]),
                    int(table.significant_caie[i]),
                    int(table.eval_t),
                    _f(table.level),
                ]
            )


def read_effects_csv(path) -> EffectTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise ValueError(f"no rows in {path}")

    def col(name, conv=float):
        return np.array([conv(r[name]) for r in rows])

    se = col("se_caie")
    return EffectTable(
        row_id=col("row_id", int),
        caie=col("caie"),
        cade=col("cade"),
        tau=col("tau"),
        se_caie=se,
        se_cade=col("se_cade"),
        caie_lo=col("caie_lo"),
        caie_hi=col("caie_hi"),
        cade_lo=col("cade_lo"),
        cade_hi=col("cade_hi"),
        significant_caie=col("significant_caie", lambda v: bool(int(v))),
        arm=col("arm", int),
        eval_t=int(rows[0]["eval_t"]),
        level=float(rows[0]["level"]),
        has_inference=bool(np.any(np.isfinite(se))),
    )


def write_effects_plotdata(table: EffectTable, path) -> None:
    """Per-unit rows sorted by the indirect-effect estimate (display order)."""
    order = np.argsort(table.caie, kind="stable")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "row_id", "caie", "caie_lo", "caie_hi", "significant_caie"])
        for rank, i in enumerate(order):
            writer.writerow(
                [
                    rank,
                    int(table.row_id[i]),
                    _f(table.caie[i]),
                    _f(table.caie_lo[i]),
                    _f(table.caie_hi[i]),
                    int(table.significant_caie[i]),
                ]
            )


# -- subgroup reports --------------------------------------------------


def write_subgroups(report: SubgroupReport, csv_path, json_path) -> None:
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["name", "kind", "statistic", "estimate", "ci_lo", "ci_hi", "significant", "zero_cell"]
        )
        for row in report.rows:
            writer.writerow(
                [
                    row.name,
                    row.kind,
                    row.statistic,
                    _f(row.estimate),
                    _f(row.ci_lo),
                    _f(row.ci_hi),
                    int(row.significant),
                    int(row.zero_cell),
                ]
            )
    write_json(
        json_path,
        {
            "level": report.level,
            "n_significant": report.n_significant,
            "n_nonsignificant": report.n_nonsignificant,
            "rows": [
                {
                    "name": r.name,
                    "kind": r.kind,
                    "statistic": r.statistic,
                    "estimate": r.estimate,
                    "ci_lo": r.ci_lo,
                    "ci_hi": r.ci_hi,
                    "significant": r.significant,
                    "zero_cell": r.zero_cell,
                }
                for r in report.rows
            ],
        },
    )


# -- simulation reports --------------------------------------------------


def write_sim_report(report: SimReport, json_path, csv_path, meta_path=None) -> None:
    """Canonical report (deterministic) plus an optional timing sidecar."""
    write_json(json_path, report.to_json_dict(include_timing=False))
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["method", "n", "effect", "metric", "value", "feasible", "replications", "failures"]
        )
        for row in report.tidy_rows():
            writer.writerow(
                [
                    row["method"],
                    row["n"],
                    row["effect"],
                    row["metric"],
                    _f(row["value"]),
                    int(row["feasible"]),
                    row["replications"],
                    row["failures"],
                ]
            )
    if meta_path is not None:
        cells = {
            f"{method}_n{n}": cell.seconds for (method, n), cell in sorted(report.cells.items())
        }
        write_json(meta_path, {"total_seconds": report.total_seconds, "cell_seconds": cells})


# -- split inference -----------------------------------------------------


def write_split_report(si: SplitInference, csv_path, json_path, covariate_names=None) -> None:
    method = "genlasso_split"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "row_id",
                "caie",
                "caie_lo",
                "caie_hi",
                "cade",
                "cade_lo",
                "cade_hi",
                "method",
                "B",
                "seed",
                "level",
                "eval_t",
            ]
        )
        for i in range(si.caie_est.shape[0]):
            writer.writerow(
                [
                    i,
                    _f(si.caie_est[i]),
                    _f(si.caie_lo[i]),
                    _f(si.caie_hi[i]),
                    _f(si.cade_est[i]),
                    _f(si.cade_lo[i]),
                    _f(si.cade_hi[i]),
                    method,
                    si.B,
                    si.seed,
                    _f(si.level),
                    si.t,
                ]
            )
    freq = si.selection_frequency
    names = (
        list(covariate_names)
        if covariate_names is not None
        else [f"z{j}" for j in range(freq.shape[0])]
    )
    write_json(
        json_path,
        {
            "method": method,
            "B": si.B,
            "seed": si.seed,
            "level": si.level,
            "eval_t": si.t,
            "selection_frequency": {names[j]: float(freq[j]) for j in range(freq.shape[0])},
            "units": [
                {
                    "row_id": i,
                    "caie": float(si.caie_est[i]),
                    "caie_lo": float(si.caie_lo[i]),
                    "caie_hi": float(si.caie_hi[i]),
                    "cade": float(si.cade_est[i]),
                    "cade_lo": float(si.cade_lo[i]),
                    "cade_hi": float(si.cade_hi[i]),
                }
                for i in range(si.caie_est.shape[0])
            ],
        },
    )
