"""Command-line pipeline: fit -> effects -> subgroups, plus simulation tools.

Subcommands: ``fit``, ``effects``, ``subgroups``, ``simulate``,
``split-infer``.  Options come from CLI flags layered over an optional
flat ``KEY=VALUE`` config file.  Exit codes: 0 success, 2 validation
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core_model import load_table, validate_dataset
from .errors import HetmedError, InvalidConfig, NumericalError, Underdetermined, ValidationError
from .inference import estimate_covariance, split_inference
from .mediation import effect_table, population_average
from .profiling import subgroup_report
from .report_io import (
    read_effects_csv,
    read_json,
    theta_from_dict,
    theta_to_dict,
    write_effects_csv,
    write_effects_plotdata,
    write_json,
    write_sim_report,
    write_split_report,
    write_subgroups,
)
from .simulation import GENLASSO_METHOD, OLS_METHOD, DgpConfig, ols_feasible, run_study
from .solvers import SolverOptions, fit_ols, tune_cp
from .stacker import MEDIATOR, OUTCOME, phi_pair_from_stacked, stack_model, theta_from_fits


@dataclass
class RunConfig:
    """Resolved options for one CLI invocation."""

    input: str | None = None
    treatment_column: str = "T"
    mediator_column: str = "M"
    outcome_column: str = "Y"
    intervention_level: str | None = None
    covariates: list[str] | None = None
    method: str = "auto"
    inference: str = "auto"
    level: float = 0.95
    B: int = 500
    seed: int = 0
    standardize: bool = False
    out_dir: str = "."
    eval_t: int = 1
    arm: int | None = None
    n_jobs: int = 1
    kkt_tol: float = 1e-6
    zero_tol: float = 1e-8
    max_iter: int = 50_000
    grid_size: int = 50
    ridge_eps: float | None = None

    def validate(self) -> "RunConfig":
        if not 0.0 < self.level < 1.0:
            raise InvalidConfig(f"level must be in (0,1), got {self.level}")
        if self.method not in ("auto", OLS_METHOD, GENLASSO_METHOD):
            raise InvalidConfig(f"method must be auto/ols/genlasso, got {self.method!r}")
        if self.inference not in ("auto", "wald", "none"):
            raise InvalidConfig(f"inference must be auto/wald/none, got {self.inference!r}")
        if self.method == GENLASSO_METHOD and self.B < 2:
            raise InvalidConfig(f"B must be >= 2 for the penalized method, got {self.B}")
        if self.eval_t not in (-1, 1):
            raise InvalidConfig(f"eval_t must be -1 or +1, got {self.eval_t}")
        return self

    def solver_options(self) -> SolverOptions:
        return SolverOptions(
            kkt_tol=self.kkt_tol,
            zero_tol=self.zero_tol,
            max_iter=self.max_iter,
            grid_size=self.grid_size,
            ridge_eps=self.ridge_eps,
        )


_INT_KEYS = {"b", "seed", "eval_t", "arm", "n_jobs", "max_iter", "grid_size"}
_FLOAT_KEYS = {"level", "kkt_tol", "zero_tol", "ridge_eps"}
_BOOL_KEYS = {"standardize"}
_LIST_KEYS = {"covariates"}


def parse_config_file(path) -> dict:
    """Flat KEY=VALUE lines; '#' starts a comment; keys mirror RunConfig."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidConfig(f"{path}:{lineno}: expected KEY=VALUE, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip().lower().replace("-", "_")
        value = value.strip()
        if key == "b":
            key = "B"
        out[key] = _coerce(key, value)
    return out


def _coerce(key: str, value: str):
    k = key.lower()
    try:
        if k in _INT_KEYS:
            return int(value)
        if k in _FLOAT_KEYS:
            return float(value)
    except ValueError as exc:
        raise InvalidConfig(f"config key {key}: cannot parse {value!r}") from exc
    if k in _BOOL_KEYS:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise InvalidConfig(f"config key {key}: expected a boolean, got {value!r}")
    if k in _LIST_KEYS:
        return [v.strip() for v in value.split(",") if v.strip()]
    return value


def parse_literal(value):
    """Best-effort literal for treatment levels given as strings."""
    if value is None or not isinstance(value, str):
        return value
    for conv in (int, float):
        try:
            return conv(value)
        except ValueError:
            pass
    return value


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        file_values = parse_config_file(args.config)
        known = set(cfg.__dataclass_fields__)
        for key, value in file_values.items():
            if key not in known:
                raise InvalidConfig(f"unknown config key {key!r}")
            setattr(cfg, key, value)
    for key in cfg.__dataclass_fields__:
        flag = getattr(args, key, None)
        if flag is not None:
            setattr(cfg, key, flag)
    return cfg.validate()


def _load_dataset(cfg: RunConfig):
    if not cfg.input:
        raise InvalidConfig("an --input CSV file is required")
    table = load_table(cfg.input)
    return validate_dataset(
        table,
        treatment_column=cfg.treatment_column,
        mediator_column=cfg.mediator_column,
        outcome_column=cfg.outcome_column,
        intervention_level=parse_literal(cfg.intervention_level),
        covariate_columns=cfg.covariates,
        standardize=cfg.standardize,
    )


def resolve_method(method: str, n: int, p: int) -> str:
    if method != "auto":
        return method
    return OLS_METHOD if ols_feasible(n, p) else GENLASSO_METHOD


def _fit_diag(fit, trace=None) -> dict:
    diag = {
        "method": fit.method,
        "lambda": fit.lam,
        "rss": fit.rss,
        "df": fit.df,
        "kkt_residual": fit.kkt_residual,
        "converged": fit.converged,
        "iterations": fit.iterations,
    }
    if trace is not None:
        def _num(v):
            return float(v) if np.isfinite(v) else None

        diag["cp_trace"] = {
            "lambdas": [_num(v) for v in trace.lambdas],
            "cp": [_num(v) for v in trace.cp_values],
            "df": [_num(v) for v in trace.df_values],
            "chosen_index": int(trace.chosen_index),
            "failed": [bool(v) for v in trace.failed],
            "sigma2_hat": float(trace.sigma2_hat),
        }
    return diag


def cmd_fit(cfg: RunConfig, _args=None) -> int:
    d = _load_dataset(cfg)
    method = resolve_method(cfg.method, d.n, d.p)
    opts = cfg.solver_options()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    sd_m = stack_model(d, MEDIATOR)
    sd_o = stack_model(d, OUTCOME)
    if method == OLS_METHOD:
        fit_m = fit_ols(sd_m)
        fit_o = fit_ols(sd_o)
        trace_m = trace_o = None
    else:
        fit_m, trace_m = tune_cp(sd_m, grid_size=cfg.grid_size, opts=opts)
        fit_o, trace_o = tune_cp(sd_o, grid_size=cfg.grid_size, opts=opts)
    theta = theta_from_fits(
        phi_pair_from_stacked(fit_m.phi, d.p), phi_pair_from_stacked(fit_o.phi, d.p + 1)
    )

    write_json(out / "theta.json", theta_to_dict(theta, d.covariate_names))
    write_json(
        out / "fit.json",
        {
            "method": method,
            "n": d.n,
            "p": d.p,
            "seed": cfg.seed,
            "standardize": cfg.standardize,
            "mediator_model": _fit_diag(fit_m, trace_m),
            "outcome_model": _fit_diag(fit_o, trace_o),
        },
    )
    print(f"fit: method={method} n={d.n} p={d.p} -> {out / 'theta.json'}")
    return 0


def cmd_effects(cfg: RunConfig, args=None) -> int:
    d = _load_dataset(cfg)
    theta_path = getattr(args, "theta", None) or Path(cfg.out_dir) / "theta.json"
    theta, _names = theta_from_dict(read_json(theta_path))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    cov = None
    if cfg.inference in ("auto", "wald"):
        try:
            cov = estimate_covariance(d, theta)
        except Underdetermined:
            if cfg.inference == "wald":
                raise
            print(
                "effects: n too small for plug-in intervals; emitting point estimates "
                "(use split-infer for interval estimates)",
                file=sys.stderr,
            )
    table = effect_table(theta, d, t=cfg.eval_t, cov=cov, level=cfg.level, arm=cfg.arm)
    write_effects_csv(table, out / "effects.csv")
    write_effects_plotdata(table, out / "effects_plotdata.csv")
    write_json(
        out / "population_average.json",
        {
            "overall": population_average(theta, d, t=cfg.eval_t),
            "intervention_arm": population_average(theta, d, t=cfg.eval_t, arm=1),
            "control_arm": population_average(theta, d, t=cfg.eval_t, arm=-1),
        },
    )
    print(f"effects: {table.n} units -> {out / 'effects.csv'}")
    return 0


def cmd_subgroups(cfg: RunConfig, args=None) -> int:
    d = _load_dataset(cfg)
    effects_path = getattr(args, "effects", None) or Path(cfg.out_dir) / "effects.csv"
    table = read_effects_csv(effects_path)
    report = subgroup_report(table, d, level=cfg.level)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_subgroups(report, out / "subgroups.csv", out / "subgroups.json")
    print(
        f"subgroups: significant={report.n_significant} "
        f"non-significant={report.n_nonsignificant} -> {out / 'subgroups.csv'}"
    )
    return 0


def cmd_split_infer(cfg: RunConfig, _args=None) -> int:
    d = _load_dataset(cfg)
    si = split_inference(
        d,
        B=cfg.B,
        seed=cfg.seed,
        opts=cfg.solver_options(),
        level=cfg.level,
        t=cfg.eval_t,
        n_jobs=cfg.n_jobs,
    )
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_split_report(
        si, out / "split_effects.csv", out / "split_effects.json", d.covariate_names
    )
    print(f"split-infer: B={cfg.B} units={d.n} -> {out / 'split_effects.csv'}")
    return 0


def cmd_simulate(cfg: RunConfig, args) -> int:
    ns = [int(v) for v in args.ns.split(",") if v.strip()]
    methods = [v.strip() for v in args.methods.split(",") if v.strip()]
    p = args.p
    dgp = DgpConfig(
        n=max(ns),
        p=p,
        n_continuous=p - p // 2,
        n_binary=p // 2,
        sparsity=args.sparsity,
        noise_sd=args.noise_sd,
        beta0=args.beta0,
        beta1=args.beta1,
        seed=cfg.seed,
    )
    report = run_study(
        methods,
        ns,
        args.replications,
        dgp,
        B=cfg.B,
        level=cfg.level,
        genlasso_inference=args.genlasso_inference,
        opts=cfg.solver_options(),
        n_jobs=cfg.n_jobs,
    )
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_sim_report(
        report, out / "sim_report.json", out / "sim_report.csv", out / "sim_meta.json"
    )
    print(f"simulate: {len(report.cells)} cells -> {out / 'sim_report.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hetmed",
        description="Heterogeneous mediation effects: estimation, inference, simulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--input", default=None, help="input CSV file")
        sp.add_argument("--config", default=None, help="flat KEY=VALUE config file")
        sp.add_argument("--method", default=None, choices=["auto", "ols", "genlasso"])
        sp.add_argument("--level", type=float, default=None, help="confidence level")
        sp.add_argument("--B", type=int, default=None, help="number of sample splits")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument(
            "--standardize",
            action="store_const",
            const=True,
            default=None,
            help="standardize continuous covariates",
        )
        sp.add_argument("--out-dir", dest="out_dir", default=None)
        sp.add_argument("--treatment-column", dest="treatment_column", default=None)
        sp.add_argument("--mediator-column", dest="mediator_column", default=None)
        sp.add_argument("--outcome-column", dest="outcome_column", default=None)
        sp.add_argument("--intervention-level", dest="intervention_level", default=None)
        sp.add_argument("--eval-t", dest="eval_t", type=int, default=None, choices=[-1, 1])
        sp.add_argument("--n-jobs", dest="n_jobs", type=int, default=None)
        sp.add_argument("--kkt-tol", dest="kkt_tol", type=float, default=None)
        sp.add_argument("--zero-tol", dest="zero_tol", type=float, default=None)
        sp.add_argument("--max-iter", dest="max_iter", type=int, default=None)
        sp.add_argument("--grid-size", dest="grid_size", type=int, default=None)
        sp.add_argument("--ridge-eps", dest="ridge_eps", type=float, default=None)

    sp_fit = sub.add_parser("fit", help="estimate structural coefficients")
    common(sp_fit)
    sp_fit.set_defaults(func=cmd_fit)

    sp_eff = sub.add_parser("effects", help="per-unit effect table with intervals")
    common(sp_eff)
    sp_eff.add_argument("--theta", default=None, help="theta.json from a previous fit")
    sp_eff.add_argument(
        "--inference", default=None, choices=["auto", "wald", "none"], dest="inference"
    )
    sp_eff.add_argument("--arm", type=int, default=None, choices=[-1, 1])
    sp_eff.set_defaults(func=cmd_effects)

    sp_sub = sub.add_parser("subgroups", help="profile significant-effect subgroup")
    common(sp_sub)
    sp_sub.add_argument("--effects", default=None, help="effects.csv from a previous run")
    sp_sub.set_defaults(func=cmd_subgroups)

    sp_split = sub.add_parser("split-infer", help="multiple sample-splitting intervals")
    common(sp_split)
    sp_split.set_defaults(func=cmd_split_infer)

    sp_sim = sub.add_parser("simulate", help="replication study over (method, n) cells")
    common(sp_sim)
    sp_sim.add_argument("--ns", default="200,1000,2000")
    sp_sim.add_argument("--methods", default="ols,genlasso")
    sp_sim.add_argument("--replications", type=int, default=200)
    sp_sim.add_argument("--p", type=int, default=100)
    sp_sim.add_argument("--sparsity", type=float, default=0.95)
    sp_sim.add_argument("--noise-sd", dest="noise_sd", type=float, default=0.5)
    sp_sim.add_argument("--beta0", type=float, default=1.0)
    sp_sim.add_argument("--beta1", type=float, default=0.5)
    sp_sim.add_argument(
        "--genlasso-inference",
        dest="genlasso_inference",
        default="split",
        choices=["split", "refit"],
    )
    sp_sim.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        return args.func(cfg, args)
    except ValidationError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 3
    except HetmedError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
