"""Command-line entry points.

Exit codes: 0 success, 2 bad input/config, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .appdata import APP_SEED, trauma_analogue
from .core import Pattern, write_csv
from .datagen import SCENARIOS, GenerativeSpec, calibrate_intercept
from .errors import InputError, NumericError
from .mechanisms import classify, joint_from_csv
from .oracle import conditional_gaussian, mc_predict
from .procedures import PROCEDURES, ProcedureConfig
from .runner import (
    DEFAULT_MASTER_SEED,
    load_sweep_config,
    run_apply,
    run_explore_missing_y,
    run_sweep,
)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="missforecast",
        description="Prediction with missing predictors: simulation sweeps, "
                    "mechanism checks, reference forecasters and an "
                    "application pipeline.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the scenario sweep")
    sim.add_argument("--config", help="TOML sweep configuration")
    sim.add_argument("--paper-scale", action="store_true",
                     help="0.1%% grid instead of the 1%% desk grid")
    sim.add_argument("--cell", help="run a single cell, e.g. S4:0.30:0")
    sim.add_argument("--output-dir")
    sim.add_argument("--workers", type=int)

    exp = sub.add_parser("explore-ymiss",
                         help="outcome-missingness exploration on scenario S5")
    exp.add_argument("--config")
    exp.add_argument("--cell")
    exp.add_argument("--output-dir")
    exp.add_argument("--workers", type=int)

    app = sub.add_parser("apply", help="leave-one-out evaluation on a CSV")
    app.add_argument("--data", required=True)
    app.add_argument("--outcome", required=True)
    app.add_argument("--procedure", required=True, choices=PROCEDURES)
    app.add_argument("--imputations", type=int, default=20)
    app.add_argument("--no-mimi-interactions", action="store_true",
                     help="indicator main effects only in the outcome model")
    app.add_argument("--bootstrap", type=int, default=10_000)
    app.add_argument("--seed", type=int, default=DEFAULT_MASTER_SEED)
    app.add_argument("--output", help="report CSV path")

    mech = sub.add_parser("check-mechanism",
                          help="classify a discrete probability table")
    mech.add_argument("table", help="CSV with variable columns + prob")
    mech.add_argument("--outcome", default="Y")
    mech.add_argument("--tol", type=float, default=1e-9)

    orc = sub.add_parser("oracle", help="query the reference forecasters")
    orc.add_argument("--scenario", required=True, choices=SCENARIOS)
    orc.add_argument("--prop", type=float, required=True,
                     help="expected missingness proportion")
    orc.add_argument("--pattern", required=True,
                     help="bit string over (x1, x2), e.g. 10")
    orc.add_argument("--x1", type=float)
    orc.add_argument("--x2", type=float)

    mk = sub.add_parser("make-app-data",
                        help="write the bundled synthetic application dataset")
    mk.add_argument("--output", required=True)
    mk.add_argument("--seed", type=int, default=APP_SEED)
    return parser


def _cmd_simulate(args):
    overrides = {}
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    if args.workers:
        overrides["n_workers"] = args.workers
    cfg = load_sweep_config(args.config, paper_scale=args.paper_scale,
                            overrides=overrides)
    metrics, manifest = run_sweep(cfg, cell=args.cell)
    print(f"metrics: {metrics}")
    print(f"manifest: {manifest}")


def _cmd_explore(args):
    overrides = {}
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    if args.workers:
        overrides["n_workers"] = args.workers
    cfg = load_sweep_config(args.config, overrides=overrides)
    metrics, manifest = run_explore_missing_y(cfg, cell=args.cell)
    print(f"metrics: {metrics}")
    print(f"manifest: {manifest}")


def _cmd_apply(args):
    cfg = ProcedureConfig(
        name=args.procedure, m_imputations=args.imputations,
        mimi_interactions=not args.no_mimi_interactions,
    )
    rows, result = run_apply(args.data, args.outcome, cfg, seed=args.seed,
                             bootstrap_replicates=args.bootstrap,
                             output_path=args.output)
    print(f"{'subgroup':<16} {'n':>5} {'share':>7} {'brier':>7} "
          f"{'95% CI':>17}")
    for r in rows:
        flag = " *" if r["unreliable"] else ""
        print(f"{r['subgroup']:<16} {r['n']:>5} {r['share']:>7.1%} "
              f"{r['brier']:>7.3f} [{r['ci_low']:.3f}, {r['ci_high']:.3f}]{flag}")
    if any(r["unreliable"] for r in rows):
        print("* interval indicative only (subgroup smaller than 10)")
    if result.fallbacks:
        print(f"{len(result.fallbacks)} fold(s) used the intercept-only fallback")
    if args.output:
        print(f"report: {args.output}")


def _cmd_check_mechanism(args):
    joint = joint_from_csv(args.table, outcome=args.outcome)
    report = classify(joint, tol=args.tol)
    print(report.as_text())


def _cmd_oracle(args):
    pattern = Pattern.from_string(args.pattern)
    if pattern.p != 2:
        raise InputError("the generative law has exactly two predictors")
    spec = GenerativeSpec.default(args.scenario)
    spec = spec.with_alpha0(calibrate_intercept(spec, args.prop))
    values = {0: args.x1, 1: args.x2}
    x_obs = []
    for j in pattern.observed_indices:
        if values[j] is None:
            raise InputError(f"pattern {pattern} needs --x{j + 1}")
        x_obs.append(values[j])
    x_obs = np.array(x_obs)
    mu = conditional_gaussian(spec, pattern, x_obs)
    mc = mc_predict(spec, pattern, x_obs)
    print(f"scenario {args.scenario}, proportion {args.prop}, "
          f"pattern {pattern}, evidence {x_obs.tolist()}")
    print(f"MU: mean {mu.mean:.6f}  variance {mu.variance:.6f}")
    print(f"MC: mean {mc.mean:.6f}  variance {mc.variance:.6f}")


def _cmd_make_app_data(args):
    ds = trauma_analogue(seed=args.seed)
    write_csv(ds, args.output, outcome_col="severe")
    print(f"wrote {ds.n} rows to {args.output}")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {
        "simulate": _cmd_simulate,
        "explore-ymiss": _cmd_explore,
        "apply": _cmd_apply,
        "check-mechanism": _cmd_check_mechanism,
        "oracle": _cmd_oracle,
        "make-app-data": _cmd_make_app_data,
    }
    try:
        handlers[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
