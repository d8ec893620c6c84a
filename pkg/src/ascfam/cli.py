"""Command-line interface: ``ascfam fit``, ``ascfam simulate``, ``ascfam mvn-prob``.

Exit codes are a stable contract for scripting: 0 success, 1 input or
validation error, 2 numerical non-convergence (the report is still written).
Every run logs its resolved configuration, seed, and version so outputs are
reproducible from the logs alone.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from ascfam import __version__
from ascfam.estimate import FitError, FitOptions, FitResult, fit, fit_naive, lrt
from ascfam.genetics import GeneticsError, ScoreModel
from ascfam.jointmodel import ModelError
from ascfam.mvnorm import Gaussian, NotPositiveDefiniteError, Rectangle, rectangle_prob
from ascfam.pedigree import PedigreeError, load_pedigree, validate
from ascfam.simulate import (
    SimulationError,
    replicate_rows,
    run_scenario,
    scenario_from_dict,
    scenario_to_dict,
)

log = logging.getLogger("ascfam")

INPUT_ERRORS = (
    PedigreeError,
    GeneticsError,
    ModelError,
    SimulationError,
    FitError,
    NotPositiveDefiniteError,
    ValueError,
    OSError,
    KeyError,
    TypeError,
)


def _fit_block(result: FitResult) -> dict:
    return {
        "parameters": {
            name: {
                "estimate": result.params[name],
                "se": result.se.get(name),
                "boundary": result.boundary.get(name, False),
            }
            for name in result.params
        },
        "loglik": result.loglik,
        "converged": result.converged,
        "iterations": result.iterations,
        "derived": result.derived,
        "derived_se": result.derived_se,
        "warnings": result.warnings,
    }


def cmd_fit(args: argparse.Namespace) -> int:
    options = FitOptions(
        mode=args.mode,
        delta_constrained=not args.free_delta,
        maf=args.maf,
        seed=args.seed,
    )
    covariates = args.covariates.split(",") if args.covariates else None
    if covariates is None:
        cohort = load_pedigree(args.data, genetic_mode=args.mode)
    else:
        from ascfam.pedigree import parse_pedigree

        with open(args.data, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise PedigreeError(f"{args.data}: empty file (header required)")
            missing = [c for c in covariates if c not in reader.fieldnames]
            if missing:
                raise PedigreeError(f"covariates not found in the data file: {missing}")
            cohort = parse_pedigree(
                reader, covariate_names=covariates, genetic_mode=args.mode
            )

    errors = []
    for family in cohort.families:
        for diag in validate(family):
            if diag.severity == "error":
                errors.append(diag)
            else:
                log.info("diagnostic: %s/%s %s: %s", diag.family_id, diag.member_id,
                         diag.rule, diag.message)
    if errors:
        for diag in errors:
            print(
                f"error: family {diag.family_id!r} member {diag.member_id!r} "
                f"[{diag.rule}] {diag.message}",
                file=sys.stderr,
            )
        return 1

    log.info(
        "fit: data=%s mode=%s families=%d seed=%d version=%s",
        args.data, args.mode, cohort.n_families, args.seed, __version__,
    )

    full = fit(cohort, options)
    report = {
        "mode": args.mode,
        **_fit_block(full),
        "q_used": (
            dataclasses.asdict(full.q_used)
            if isinstance(full.q_used, ScoreModel)
            else full.q_used
        ),
        "seed": args.seed,
        "version": __version__,
        "resolved_options": dataclasses.asdict(options),
    }
    all_converged = full.converged

    if args.null:
        null_start = dataclasses.replace(full.theta_hat, beta1=0.0)
        null = fit(cohort, options, fix={"beta1": 0.0}, compute_se=False, start=null_start)
        all_converged = all_converged and null.converged
        report["lrt"] = lrt(full, null, df=1)
        report["null_loglik"] = null.loglik

    if args.naive:
        naive = fit_naive(cohort, options)
        block = _fit_block(naive)
        if args.null:
            nstart = dataclasses.replace(naive.theta_hat, beta1=0.0)
            nnull = fit_naive(
                cohort, options, fix={"beta1": 0.0}, compute_se=False, start=nstart
            )
            block["lrt"] = lrt(naive, nnull, df=1)
        all_converged = all_converged and naive.converged
        report["naive"] = block

    Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
    log.info("report written to %s", args.out)
    if not all_converged:
        print("warning: fit did not converge; see report", file=sys.stderr)
        return 2
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    config = json.loads(Path(args.config).read_text())
    scenario = scenario_from_dict(config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    log.info(
        "simulate: %d replicates x %d families (size %d, >=%d cases), seed=%d, "
        "version=%s",
        scenario.n_replicates, scenario.n_families, scenario.family_size,
        scenario.ascertainment_min_cases, scenario.master_seed, __version__,
    )

    summary, records = run_scenario(scenario, n_workers=args.threads, progress=True)

    (out_dir / "scenario.resolved.json").write_text(
        json.dumps(scenario_to_dict(scenario), indent=2) + "\n"
    )
    with open(out_dir / "replicates.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=["replicate", "parameter", "estimate", "se", "covered",
                        "lrt_p", "converged"],
        )
        writer.writeheader()
        writer.writerows(replicate_rows(records, scenario))
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerows(summary.flat())

    log.info("wrote %s", out_dir)
    if summary.n_failed:
        print(
            f"note: {summary.n_failed}/{summary.n_replicates} replicates failed "
            "and were excluded from the aggregates",
            file=sys.stderr,
        )
    return 0


def _parse_vector(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")])


def _parse_matrix(text: str) -> np.ndarray:
    return np.array([[float(v) for v in row.split(",")] for row in text.split(";")])


def cmd_mvn_prob(args: argparse.Namespace) -> int:
    mean = _parse_vector(args.mean)
    cov = _parse_matrix(args.cov)
    lower = _parse_vector(args.lower)
    upper = _parse_vector(args.upper)
    p, err = rectangle_prob(
        Gaussian(mean=mean, cov=cov),
        Rectangle(lower=lower, upper=upper),
        accuracy=args.accuracy,
    )
    print(f"probability {p!r} error_estimate {err!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ascfam",
        description="Secondary-phenotype analysis for ascertained family designs.",
    )
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit the retrospective joint model to a pedigree CSV")
    p_fit.add_argument("--data", required=True, help="pedigree CSV file")
    p_fit.add_argument("--mode", choices=["snp", "score"], default="snp")
    p_fit.add_argument("--maf", type=float, default=None,
                       help="fix the minor allele frequency instead of estimating it")
    p_fit.add_argument("--maf-from-controls", action="store_true",
                       help="estimate the MAF from controls (the default)")
    p_fit.add_argument("--covariates", default=None,
                       help="comma-separated covariate column names")
    p_fit.add_argument("--free-delta", action="store_true",
                       help="do not constrain the shared-effect scaling to 1")
    p_fit.add_argument("--naive", action="store_true",
                       help="also fit the naive linear mixed model")
    p_fit.add_argument("--null", action="store_true",
                       help="also fit the beta1=0 null model and report the LRT")
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--threads", type=int, default=None)
    p_fit.add_argument("--out", required=True, help="output report JSON path")
    p_fit.set_defaults(func=cmd_fit)

    p_sim = sub.add_parser("simulate", help="run a simulation scenario")
    p_sim.add_argument("--config", required=True, help="scenario JSON file")
    p_sim.add_argument("--out-dir", required=True)
    p_sim.add_argument("--threads", type=int, default=os.cpu_count(),
                       help="worker processes (default: available cores); "
                            "results are identical for any value")
    p_sim.set_defaults(func=cmd_simulate)

    p_mvn = sub.add_parser("mvn-prob", help="evaluate an MVN rectangle probability")
    p_mvn.add_argument("--mean", required=True, help="comma-separated mean vector")
    p_mvn.add_argument("--cov", required=True,
                       help="semicolon-separated rows of comma-separated entries")
    p_mvn.add_argument("--lower", required=True, help="lower bounds (use -inf for open)")
    p_mvn.add_argument("--upper", required=True, help="upper bounds (use inf for open)")
    p_mvn.add_argument("--accuracy", type=float, default=1e-6)
    p_mvn.set_defaults(func=cmd_mvn_prob)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
