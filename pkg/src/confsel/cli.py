"""Command-line front end.

Subcommands: ``select`` (covariate selection report), ``estimate``
(selection plus doubly robust effect with bootstrap interval),
``simulate`` (Monte Carlo study tables), ``figure2`` (single-covariate
no-shrinkage curve) and ``check-penalty`` (penalty condition report).
Every command is deterministic given its flags and ``--seed``, which is
echoed into all artifacts.  Exit codes: 0 success, 2 input/validation
problem, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .ate import thresholded_bootstrap
from .data import load_csv
from .exceptions import ConfselError, InputError, NumericalError
from .penalties import check_penalty_conditions, make_penalty
from .selector import OptimizerConfig, select
from .simulate import (
    Scenario,
    builtin_scenarios,
    no_shrinkage_experiment,
    run_study,
)

SCHEMA_VERSION = 1
DEFAULT_SEED = 20240 + 1


def _workers_default() -> int:
    env = os.environ.get("CONFSEL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--penalty", choices=("scad", "lasso"), default="scad")
    parser.add_argument("--scad-a", type=float, default=3.7)
    parser.add_argument(
        "--lambda-grid",
        type=str,
        default=None,
        help="comma-separated lambda values overriding the automatic grid",
    )
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    parser.add_argument("--workers", type=int, default=_workers_default())
    parser.add_argument("--out", type=Path, default=Path("."))
    parser.add_argument(
        "--format",
        type=str,
        default="csv,markdown",
        help="comma-separated subset of csv,json,markdown",
    )


def _add_input(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--input", type=Path, required=True)
    parser.add_argument("--outcome", type=str, required=True)
    parser.add_argument("--treatment", type=str, required=True)
    parser.add_argument(
        "--treatment-labels",
        type=str,
        default=None,
        help="control,treated labels to map onto 0/1",
    )
    parser.add_argument(
        "--drop-missing",
        action="store_true",
        help="listwise-delete rows with missing cells instead of failing",
    )


def _build_cfg(args) -> OptimizerConfig:
    if args.lambda_grid:
        grid = np.array([float(v) for v in args.lambda_grid.split(",")])
        return OptimizerConfig(lambda_grid=grid)
    return OptimizerConfig()


def _formats(args) -> set[str]:
    fmts = {f.strip() for f in args.format.split(",") if f.strip()}
    unknown = fmts - {"csv", "json", "markdown"}
    if unknown:
        raise InputError(f"unknown output formats: {sorted(unknown)}")
    return fmts


def _load(args):
    labels = None
    if args.treatment_labels:
        parts = args.treatment_labels.split(",")
        if len(parts) != 2:
            raise InputError("--treatment-labels expects 'control,treated'")
        labels = (parts[0], parts[1])
    return load_csv(
        args.input,
        outcome_col=args.outcome,
        treatment_col=args.treatment,
        treatment_labels=labels,
        drop_missing=args.drop_missing,
    )


def _write_json(path: Path, payload: dict) -> None:
    payload = {"schema_version": SCHEMA_VERSION, **payload}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _selection_payload(res, args) -> dict:
    return {
        "command": "select",
        "seed": args.seed,
        "penalty": args.penalty,
        "lambda_hat": res.lambda_hat,
        "converged": bool(res.converged),
        "selected": [
            {"name": res.names[j], "coef": float(res.eta_hat.alpha[j])}
            for j in res.selected
        ],
        "treatment_coef": res.eta_hat.beta_d,
    }


def _write_selection(res, args, out: Path, fmts: set[str]) -> None:
    rows = pd.DataFrame(
        {
            "variable": [res.names[j] for j in res.selected],
            "coef": [float(res.eta_hat.alpha[j]) for j in res.selected],
        }
    )
    gcv = pd.DataFrame(
        [(p.lam, p.gcv, p.dof) for p in res.gcv_path],
        columns=["lambda", "gcv", "dof"],
    )
    if "csv" in fmts:
        rows.to_csv(out / "selected.csv", index=False, float_format="%.10g")
        gcv.to_csv(out / "gcv_path.csv", index=False, float_format="%.10g")
    if "json" in fmts:
        _write_json(out / "selected.json", _selection_payload(res, args))
    if "markdown" in fmts:
        lines = [
            "# Selected covariates",
            "",
            f"- penalty: {args.penalty}, lambda: {res.lambda_hat:.6g}, "
            f"seed: {args.seed}",
            "",
            "| Variable | Coefficient |",
            "|---|---|",
        ]
        for _, r in rows.iterrows():
            lines.append(f"| {r['variable']} | {r['coef']:.4f} |")
        if rows.empty:
            lines.append("| (none selected) | |")
        (out / "selected.md").write_text("\n".join(lines) + "\n")


def cmd_select(args) -> int:
    ds = _load(args)
    res = select(ds, family=args.penalty, cfg=_build_cfg(args), scad_a=args.scad_a)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    fmts = _formats(args)
    _write_selection(res, args, out, fmts)
    if res.selected.size == 0:
        print("warning: empty selection", file=sys.stderr)
    print(f"selected {res.selected.size} covariates at lambda={res.lambda_hat:.6g}")
    return 0


def cmd_estimate(args) -> int:
    ds = _load(args)
    if not ds.both_arms():
        raise InputError("both treatment arms must be present")
    cfg = _build_cfg(args)
    res = select(ds, family=args.penalty, cfg=cfg, scad_a=args.scad_a)
    est = thresholded_bootstrap(
        ds,
        family=args.penalty,
        cfg=cfg,
        b_boot=args.boot,
        seed=args.seed,
        scad_a=args.scad_a,
        workers=args.workers,
        selection=res,
    )
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    fmts = _formats(args)
    _write_selection(res, args, out, fmts)
    payload = {
        "command": "estimate",
        "seed": args.seed,
        "penalty": args.penalty,
        "ate": est.theta_hat,
        "sd_tb": est.sd_tb,
        "ci_95": [est.ci_lo, est.ci_hi],
        "n_boot": est.n_boot,
        "n_skipped": est.n_skipped,
        "lambda_hat": est.lambda_hat,
        "selected": [res.names[j] for j in res.selected],
    }
    if "json" in fmts:
        _write_json(out / "ate.json", payload)
    if "csv" in fmts:
        pd.DataFrame(
            [
                {
                    "ate": est.theta_hat,
                    "sd_tb": est.sd_tb,
                    "ci_lo": est.ci_lo,
                    "ci_hi": est.ci_hi,
                    "n_boot": est.n_boot,
                    "n_skipped": est.n_skipped,
                    "seed": args.seed,
                }
            ]
        ).to_csv(out / "ate.csv", index=False, float_format="%.10g")
    if "markdown" in fmts:
        (out / "ate.md").write_text(
            "# Treatment effect estimate\n\n"
            "| ATE | S.D. | C.I. (95%) |\n|---|---|---|\n"
            f"| {est.theta_hat:.3f} | {est.sd_tb:.3f} "
            f"| ({est.ci_lo:.3f}, {est.ci_hi:.3f}) |\n\n"
            f"- replicates: {est.n_boot} used, {est.n_skipped} skipped\n"
            f"- seed: {args.seed}\n"
        )
    print(
        f"ATE = {est.theta_hat:.4f}  sd = {est.sd_tb:.4f}  "
        f"CI95 = ({est.ci_lo:.4f}, {est.ci_hi:.4f})"
    )
    return 0


def _resolve_scenario(args) -> Scenario:
    name = args.scenario
    path = Path(name)
    if path.suffix == ".json" and path.exists():
        sc = Scenario.load(path)
    else:
        builtins = builtin_scenarios(n=args.n or 300, r2=args.r2 or 550)
        key = name.lower()
        if key not in builtins:
            raise InputError(
                f"unknown scenario {name!r}; choose from {sorted(builtins)} "
                "or pass a scenario JSON file"
            )
        sc = builtins[key]
    if args.n:
        sc = replace(sc, n=args.n)
    if args.r2:
        sc = replace(sc, r2=args.r2)
    if args.noise_sd:
        sc = replace(sc, y_var=float(args.noise_sd) ** 2, scale_is_sd=False)
    return sc


def cmd_simulate(args) -> int:
    sc = _resolve_scenario(args)
    methods = tuple(m.strip().lower() for m in args.methods.split(",") if m.strip())
    study = run_study(
        sc,
        methods=methods,
        n_reps=args.reps,
        b_boot=args.boot,
        seed=args.seed,
        workers=args.workers,
        oracle_ps=args.oracle_ps,
    )
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    fmts = _formats(args)
    stem = f"summary_{sc.name}_n{sc.n}"
    if "csv" in fmts:
        study.to_csv(out / f"{stem}.csv")
    if "markdown" in fmts:
        (out / f"{stem}.md").write_text(study.to_markdown())
    if "json" in fmts:
        _write_json(
            out / f"{stem}.json",
            {
                "command": "simulate",
                "seed": args.seed,
                "scenario": sc.to_dict(),
                "summary": study.summary.to_dict(orient="records"),
            },
        )
    if args.reps < 30:
        print(
            "note: few replicates; Monte Carlo error is wide", file=sys.stderr
        )
    print(study.summary.to_string(index=False))
    return 0


def cmd_figure2(args) -> int:
    grid = tuple(int(v) for v in args.n_grid.split(","))
    df = no_shrinkage_experiment(n_grid=grid, seed=args.seed)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    fmts = _formats(args)
    if "csv" in fmts:
        df.to_csv(out / "no_shrinkage.csv", index=False, float_format="%.10g")
    if "json" in fmts:
        _write_json(
            out / "no_shrinkage.json",
            {
                "command": "figure2",
                "seed": args.seed,
                "rows": df.to_dict(orient="records"),
            },
        )
    if "markdown" in fmts:
        lines = [
            "# Shared coefficient vs sample size",
            "",
            "| n | alpha_hat | outcome coef (1/sqrt n) |",
            "|---|---|---|",
        ]
        for _, r in df.iterrows():
            lines.append(
                f"| {int(r['n'])} | {r['alpha_hat']:.4f} | {r['outcome_coef']:.4f} |"
            )
        (out / "no_shrinkage.md").write_text("\n".join(lines) + "\n")
    print(df.to_string(index=False))
    return 0


def cmd_check_penalty(args) -> int:
    lam = args.lam
    fn = make_penalty(args.penalty, lam, args.scad_a)
    grid = np.linspace(lam * 1e-3 if lam > 0 else 1e-3, 10 * max(lam, 1.0), 1000)
    grid = np.concatenate([-grid[::-1], grid])
    report = check_penalty_conditions(fn, grid)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    fmts = _formats(args)
    if "markdown" in fmts:
        (out / "penalty_report.md").write_text(report.to_markdown())
    if "json" in fmts:
        _write_json(
            out / "penalty_report.json",
            {
                "command": "check-penalty",
                "seed": args.seed,
                "family": report.family,
                "violations": report.violations,
                "checks": report.checks,
            },
        )
    print(report.to_markdown())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="confsel",
        description="Confounder selection and doubly robust effect estimation",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sel = sub.add_parser("select", help="select confounders from a CSV")
    _add_input(p_sel)
    _add_common(p_sel)
    p_sel.set_defaults(func=cmd_select)

    p_est = sub.add_parser("estimate", help="selection + doubly robust ATE")
    _add_input(p_est)
    _add_common(p_est)
    p_est.add_argument("--boot", type=int, default=200)
    p_est.set_defaults(func=cmd_estimate)

    p_sim = sub.add_parser("simulate", help="Monte Carlo study")
    p_sim.add_argument("scenario", type=str, help="s1|s2|appf1|appf2 or JSON file")
    _add_common(p_sim)
    p_sim.add_argument("--n", type=int, default=None)
    p_sim.add_argument("--r2", type=int, default=None)
    p_sim.add_argument("--reps", type=int, default=100)
    p_sim.add_argument("--boot", type=int, default=0)
    p_sim.add_argument("--methods", type=str, default="scad")
    p_sim.add_argument(
        "--noise-sd",
        type=float,
        default=None,
        help="reinterpret the outcome noise scale as this SD",
    )
    p_sim.add_argument(
        "--oracle-ps",
        action="store_true",
        help="psfit uses the true treatment-model support instead of a "
        "penalized fit",
    )
    p_sim.set_defaults(func=cmd_simulate)

    p_fig = sub.add_parser(
        "figure2", help="single-covariate no-shrinkage experiment"
    )
    _add_common(p_fig)
    p_fig.add_argument("--n-grid", type=str, default="100,1000,10000,100000")
    p_fig.set_defaults(func=cmd_figure2)

    p_chk = sub.add_parser("check-penalty", help="penalty condition report")
    _add_common(p_chk)
    p_chk.add_argument("--lam", type=float, default=1.0)
    p_chk.set_defaults(func=cmd_check_penalty)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    except ConfselError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
