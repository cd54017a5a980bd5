"""Command-line front end.

Exit codes: 0 ok, 1 check failed, 2 input error, 3 model error,
4 insufficient samples, 5 no convergence.
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from tissuekinetics import __version__
from tissuekinetics.controller import RunDepot
from tissuekinetics.errors import (
    MissingWholeBlood,
    NoConvergence,
    SchemaViolation,
    TissueKineticsError,
)
from tissuekinetics.estimation import (
    FitOptions,
    FitResult,
    fit_joint,
    resolve_scale,
    verify_uniqueness,
)
from tissuekinetics.identifiability import (
    check_alpha_richness,
    check_assumption_A,
    check_region_richness,
    check_theorem_hypotheses,
)
from tissuekinetics.model_core import MixingModel, TacTable, eval_ct_closed_form, simulate_tacs
from tissuekinetics.oracle import DEFAULT_STEP, compare_to_oracle
from tissuekinetics.serialization import (
    fit_result_to_dict,
    load_configuration,
    read_cwb,
    read_tacs,
    to_jsonable,
    write_frame,
    write_json,
    write_tacs,
)
from tissuekinetics.structures import RunManifest, RunRecord
from tissuekinetics.utils import TKLogger, parse_grid_spec

logger = logging.getLogger(__name__)

ORACLE_THRESHOLD = 1e-6

CHECKERS = {
    "assumption": check_assumption_A,
    "region": check_region_richness,
    "alpha": check_alpha_richness,
    "theorem": check_theorem_hypotheses,
}

Outcome = Tuple[int, Dict[str, Any], Dict[str, str]]


def _sibling(path: Path, suffix: str) -> Path:
    """``out/fit.json`` + ``log.csv`` -> ``out/fit.log.csv``."""
    return path.with_name(f"{path.stem}.{suffix}")


def cmd_simulate(args: argparse.Namespace) -> Outcome:
    config = load_configuration(args.config)
    grid = parse_grid_spec(args.grid)
    mixing = MixingModel(args.vb) if args.vb is not None else None

    cwb = None
    if args.cwb is not None:
        times, cwb = read_cwb(args.cwb)
        if times.shape != grid.shape or not np.allclose(times, grid, rtol=1e-12, atol=0.0):
            raise MissingWholeBlood(
                f"Whole-blood file '{args.cwb}' must be sampled on the simulation grid ({grid.size} times) !"
            )

    tacs = simulate_tacs(config, grid, mixing, cwb)
    path = write_tacs(tacs, args.out)
    print(f"wrote {path} ({len(tacs.region_ids)} regions x {tacs.T} times)")
    summary = {"exit_code": 0, "regions": len(tacs.region_ids), "time_points": tacs.T}
    inputs = {"config": str(args.config)}
    if args.cwb is not None:
        inputs["cwb"] = str(args.cwb)
    return 0, summary, inputs


def _fit_options(args: argparse.Namespace) -> FitOptions:
    overrides = {
        key: value
        for key, value in {
            "p": args.p,
            "n_starts": args.starts,
            "seed": args.seed,
            "n_jobs": args.jobs,
            "max_iters": args.max_iters,
            "gauge": args.gauge,
            "start_perturbation": args.perturbation,
        }.items()
        if value is not None
    }
    if args.warm_start is not None:
        overrides["warm_start"] = load_configuration(args.warm_start)
    return FitOptions.from_input(args.options or {}, **overrides)


def _fitted_curves(result: FitResult, tacs: TacTable) -> pd.DataFrame:
    frame = tacs.to_frame()
    frame["fitted"] = np.concatenate(
        [
            eval_ct_closed_form(result.config.params(rid), result.config.input, tacs.time_grid)
            for rid in tacs.region_ids
        ]
    )
    return frame


def cmd_fit(args: argparse.Namespace) -> Outcome:
    tacs = read_tacs(args.tacs, args.cwb)
    options = _fit_options(args)

    try:
        result = fit_joint(tacs, options)
    except NoConvergence as err:
        result = err.result

    payload = fit_result_to_dict(result)
    summary: Dict[str, Any] = {
        "sse": result.sse,
        "converged": result.converged,
        "certified": result.certified,
        "start_index": result.start_index,
    }
    if tacs.wb_samples is not None:
        try:
            zeta, f = resolve_scale(result, tacs.wb_samples, seed=options.seed)
            payload["scale"] = {
                "zeta": zeta,
                "attenuation": to_jsonable(f),
                "rescaled_config": to_jsonable(result.config.rescaled(zeta)),
            }
            summary["zeta"] = zeta
        except TissueKineticsError as err:
            logger.warning(f"Scale resolution skipped - {type(err).__name__}: {err}")
            payload["scale"] = {"error": f"{type(err).__name__}: {err}"}

    out = Path(args.out)
    write_json(payload, out)
    write_frame(result.trace_frame(), _sibling(out, "log.csv"))
    write_frame(_fitted_curves(result, tacs), _sibling(out, "curves.csv"))
    print(f"wrote {out} (sse={result.sse:.6e}, converged={result.converged})")

    code = 0 if result.converged else NoConvergence.exit_code
    summary["exit_code"] = code
    inputs = {"tacs": str(args.tacs)}
    if args.options is not None:
        inputs["options"] = str(args.options)
    if args.warm_start is not None:
        inputs["warm_start"] = str(args.warm_start)
    return code, summary, inputs


def cmd_check(args: argparse.Namespace) -> Outcome:
    config = load_configuration(args.config)
    report = CHECKERS[args.condition](config, args.tol)
    write_json(report, args.out)
    for violation in report.violations:
        print(f"violation: {violation}")
    print(f"{args.condition}: satisfied={report.satisfied}")
    code = 0 if report.satisfied else 1
    return code, {"exit_code": code, "satisfied": report.satisfied}, {"config": str(args.config)}


def _zeta_histogram(zetas: Sequence[float]) -> pd.DataFrame:
    if not zetas:
        return pd.DataFrame(columns=["bin_left", "bin_right", "count"])
    counts, edges = np.histogram(np.asarray(zetas), bins=min(20, len(zetas)))
    return pd.DataFrame({"bin_left": edges[:-1], "bin_right": edges[1:], "count": counts})


def cmd_verify(args: argparse.Namespace) -> Outcome:
    truth = load_configuration(args.config)
    grid = parse_grid_spec(args.grid)
    if args.p is None and args.options is None:
        args.p = truth.p
    options = _fit_options(args)

    report = verify_uniqueness(truth, grid, options)
    out = Path(args.out)
    write_json(report, out)
    write_frame(_zeta_histogram(report.zeta_values), _sibling(out, "zeta.csv"))
    if report.diagnostic:
        print(f"refused: {report.diagnostic}")
    print(
        f"{report.n_equivalent}/{report.n_converged} converged fits equivalent "
        f"({report.n_starts} starts), passed={report.passed}"
    )
    code = 0 if report.passed else 1
    summary = {
        "exit_code": code,
        "passed": report.passed,
        "n_converged": report.n_converged,
        "n_equivalent": report.n_equivalent,
    }
    return code, summary, {"config": str(args.config)}


def cmd_oracle_compare(args: argparse.Namespace) -> Outcome:
    config = load_configuration(args.config)
    grid = parse_grid_spec(args.grid)
    deviations = compare_to_oracle(config, grid, args.step)
    worst = max(deviations.values())
    passed = worst <= args.threshold

    for rid, deviation in deviations.items():
        print(f"{rid:>20s}  {deviation:.3e}")
    payload = {
        "step": args.step,
        "threshold": args.threshold,
        "deviations": deviations,
        "max_deviation": worst,
        "passed": passed,
    }
    write_json(payload, args.out)
    code = 0 if passed else 1
    return code, {"exit_code": code, "max_deviation": worst, "passed": passed}, {"config": str(args.config)}


_FILTER = re.compile(r"^(?P<key>\w+)(?P<expr>[<>=!].*)$")


def cmd_runs(args: argparse.Namespace) -> int:
    criteria = {}
    for expression in args.filters:
        match = _FILTER.match(expression)
        if match is None:
            raise SchemaViolation(
                f"Run filter '{expression}' must look like 'name<op>value', e.g. 'sse<1e-10' !"
            )
        criteria[match["key"]] = match["expr"]

    with RunDepot(args.archive) as depot:
        found = depot.search_runs(view_only=True, experiment=args.experiment, **criteria)
    for run_id, description in found:
        print(description)
    print(f"{len(found)} run(s)")
    return 0


def _archive(path: str, manifest: RunManifest, summary: Dict[str, Any]) -> None:
    with RunDepot(path) as depot:
        if not depot.add_run(RunRecord.from_manifest(manifest, summary)):
            logger.error(f"Run could not be archived in '{path}'")


def _run(command: str, handler: Callable[[argparse.Namespace], Outcome], args: argparse.Namespace) -> int:
    manifest = RunManifest(
        command=command,
        options={
            key: to_jsonable(value)
            for key, value in vars(args).items()
            if key not in ("handler", "command")
        },
        seed=getattr(args, "seed", None),
    )
    started = time.perf_counter()
    code, summary, inputs = handler(args)
    manifest.wall_time_s = time.perf_counter() - started
    manifest.inputs = inputs

    out = Path(args.out)
    write_json(manifest.to_dict(), out.with_name(f"{out.name}.manifest.json"))
    if args.archive is not None:
        _archive(args.archive, manifest, summary)
    return code


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--log-level", default="warning", help="notset, debug, info, warning, error, critical")
    parser.add_argument("--log-file", default=None, help="also log to this file")
    parser.add_argument("--archive", default=None, help="run archive (.fs file or ZConfig file)")


def _add_fit_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--p", type=int, default=None, help="number of input terms")
    parser.add_argument("--starts", type=int, default=None, help="number of starts")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--jobs", type=int, default=None, help="parallel workers (default $TISSUEKINETICS_THREADS)")
    parser.add_argument("--max-iters", type=int, default=None)
    parser.add_argument("--gauge", choices=["leading", "sum"], default=None)
    parser.add_argument("--options", default=None, help="YAML file of fit options")
    parser.add_argument("--warm-start", default=None, help="configuration JSON used as perturbed start")
    parser.add_argument("--perturbation", type=float, default=None, help="warm start perturbation, e.g. 0.2")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tissuekinetics",
        description="Simulate, fit and check the reversible two tissue compartment model.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="write tissue curves of a configuration")
    simulate.add_argument("--config", required=True)
    simulate.add_argument("--grid", required=True, help="log:start,end,count or list:t1,t2,...")
    simulate.add_argument("--out", required=True)
    simulate.add_argument("--vb", type=float, default=None, help="fractional blood volume")
    simulate.add_argument("--cwb", default=None, help="whole-blood CSV (time_min,cwb) on the grid")
    _add_common(simulate)
    simulate.set_defaults(handler=cmd_simulate)

    fit = commands.add_parser("fit", help="joint fit of all regions and the input")
    fit.add_argument("--tacs", required=True)
    fit.add_argument("--cwb", default=None, help="whole-blood samples for scale resolution")
    fit.add_argument("--out", required=True)
    _add_fit_flags(fit)
    _add_common(fit)
    fit.set_defaults(handler=cmd_fit)

    check = commands.add_parser("check", help="check identifiability hypotheses")
    check.add_argument("--config", required=True)
    check.add_argument("--out", required=True)
    check.add_argument("--condition", choices=sorted(CHECKERS), default="assumption")
    check.add_argument("--tol", type=float, default=1e-9)
    _add_common(check)
    check.set_defaults(handler=cmd_check)

    verify = commands.add_parser("verify", help="empirical uniqueness experiment")
    verify.add_argument("--config", required=True)
    verify.add_argument("--grid", required=True)
    verify.add_argument("--out", required=True)
    _add_fit_flags(verify)
    _add_common(verify)
    verify.set_defaults(handler=cmd_verify)

    oracle = commands.add_parser("oracle-compare", help="closed form against the RK4 oracle")
    oracle.add_argument("--config", required=True)
    oracle.add_argument("--grid", required=True)
    oracle.add_argument("--out", required=True)
    oracle.add_argument("--step", type=float, default=DEFAULT_STEP)
    oracle.add_argument("--threshold", type=float, default=ORACLE_THRESHOLD)
    _add_common(oracle)
    oracle.set_defaults(handler=cmd_oracle_compare)

    runs = commands.add_parser("runs", help="list archived runs")
    runs.add_argument("--archive", required=True)
    runs.add_argument("--experiment", default=None)
    runs.add_argument("filters", nargs="*", help="e.g. passed==True sse<1e-10")
    runs.add_argument("--log-level", default="warning")
    runs.add_argument("--log-file", default=None)
    runs.set_defaults(handler=None)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)

    try:
        if args.log_file:
            log_path = Path(args.log_file)
            TKLogger(log_path.name, log_path.parent, args.log_level)
        else:
            TKLogger("tissuekinetics", None, args.log_level)
    except KeyError as err:
        print(f"error: {err}", file=sys.stderr)
        return SchemaViolation.exit_code

    try:
        if args.command == "runs":
            return cmd_runs(args)
        return _run(args.command, args.handler, args)
    except TissueKineticsError as err:
        logger.error(f"{type(err).__name__}: {err}")
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return err.exit_code
    except (FileNotFoundError, IsADirectoryError) as err:
        logger.error(err)
        print(f"error: {err}", file=sys.stderr)
        return SchemaViolation.exit_code
