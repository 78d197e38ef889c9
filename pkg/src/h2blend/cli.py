"""Command-line front end: load a network and scenario, optimize, audit
and write time-series CSV outputs.

Exit codes: 0 success, 2 input/parse error, 3 infeasible, 4 iteration
limit, 5 post-solve audit failure, 1 unexpected error.
"""

from __future__ import annotations

import argparse
import importlib.resources
import json
import os
import sys
from pathlib import Path

from .network import (
    ParseError,
    load_network,
    load_scenario,
    parse_scenario,
    segment_pipes,
    validate_topology,
)
from .solution import SolutionTrajectory, read_solution, write_solution
from .solver import SolverOptions, solve_steady, solve_transient
from .transcription import ConfigurationError
from .validation import run_audits

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INFEASIBLE = 3
EXIT_ITERATION_LIMIT = 4
EXIT_AUDIT = 5

BUNDLED_CASES = ("single-pipe", "eight-node")


def bundled_path(case: str, kind: str) -> Path:
    """Path of a bundled network or scenario JSON ('single-pipe'/'eight-node')."""
    stem = case.replace("-", "_")
    resource = importlib.resources.files("h2blend").joinpath(
        f"data/{stem}_{kind}.json")
    return Path(str(resource))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="h2blend",
        description="Transient optimization of hydrogen blending in gas "
                    "pipeline networks.")
    parser.add_argument("--network", help="network JSON path")
    parser.add_argument("--scenario", help="scenario JSON path")
    parser.add_argument("--case", choices=BUNDLED_CASES,
                        help="use a bundled case study instead of "
                             "--network/--scenario")
    parser.add_argument("--out", default=None,
                        help="output directory (default: $H2BLEND_OUT or "
                             "./h2blend_out)")
    parser.add_argument("--dt", type=float, default=None,
                        help="override time step, hours")
    parser.add_argument("--dl", type=float, default=None,
                        help="override segmentation length, m")
    parser.add_argument("--xi", type=float, default=None,
                        help="override economic/compression weight in [0, 1]")
    parser.add_argument("--tol", type=float, default=1e-6,
                        help="KKT tolerance")
    parser.add_argument("--mode", choices=("steady", "transient",
                                           "validate-only"),
                        default="transient")
    parser.add_argument("--iter-log", action="store_true",
                        help="write per-iteration solver log CSV")
    parser.add_argument("--export-nlp", action="store_true",
                        help="export assembled problem tables for debugging")
    return parser


def _load_inputs(args):
    if args.case is not None:
        network_path = bundled_path(args.case, "network")
        scenario_path = bundled_path(args.case, "scenario")
    else:
        if not args.network or not args.scenario:
            raise ParseError("either --case or both --network and --scenario "
                             "are required")
        network_path = Path(args.network)
        scenario_path = Path(args.scenario)
    for path in (network_path, scenario_path):
        if not path.exists():
            raise ParseError(f"input file not found: {path}")
    net = load_network(network_path)
    scenario_doc = json.loads(scenario_path.read_text())
    if args.dt is not None:
        scenario_doc["dt_hours"] = args.dt
    if args.dl is not None:
        scenario_doc["segment_length_m"] = args.dl
    if args.xi is not None:
        scenario_doc["xi"] = args.xi
    scenario = parse_scenario(scenario_doc)
    return net, scenario


def _periodicity_cycles(scenario) -> int:
    cycles = set()
    for profile in scenario.profiles.values():
        if profile.kind == "sinusoid" and profile.delta != 0.0:
            nu = profile.nu
            if abs(nu - round(nu)) < 1e-9 and round(nu) >= 2:
                cycles.add(int(round(nu)))
    return min(cycles) if len(cycles) == 1 else 0


def run(args) -> int:
    out_dir = Path(args.out or os.environ.get("H2BLEND_OUT", "h2blend_out"))
    try:
        net, scenario = _load_inputs(args)
    except (ParseError, ConfigurationError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE

    diagnostics = validate_topology(net)
    if diagnostics:
        for diag in diagnostics:
            print(f"error: topology: {diag}", file=sys.stderr)
        return EXIT_PARSE

    try:
        segnet = segment_pipes(net, scenario.dL)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE

    if args.mode == "validate-only":
        try:
            trajectory = read_solution(out_dir)
        except (OSError, KeyError, ValueError) as exc:
            print(f"error: cannot read solution from {out_dir}: {exc}",
                  file=sys.stderr)
            return EXIT_PARSE
        report = run_audits(trajectory, segnet, scenario,
                            feasibility_tol=10.0 * args.tol,
                            periodicity_cycles=_periodicity_cycles(scenario))
        print(report.to_text())
        (out_dir / "audit.json").write_text(report.to_json())
        (out_dir / "audit.txt").write_text(report.to_text() + "\n")
        return EXIT_OK if report.passed else EXIT_AUDIT

    out_dir.mkdir(parents=True, exist_ok=True)
    options = SolverOptions(kkt_tol=args.tol)
    if args.iter_log:
        options.iteration_log = str(out_dir / "iterations_steady.csv")
    steady_result, steady_problem = solve_steady(segnet, scenario, options)
    print(f"steady: {steady_result.status} in {steady_result.iterations} "
          f"iterations ({steady_result.wall_time:.2f} s), "
          f"violation {steady_result.violation:.2e}")
    if steady_result.status != "local-optimum":
        print(f"error: steady stage: {steady_result.message}", file=sys.stderr)
        return (EXIT_ITERATION_LIMIT
                if steady_result.status == "iteration-limit"
                else EXIT_INFEASIBLE)

    if args.mode == "steady":
        result, problem = steady_result, steady_problem
    else:
        if args.iter_log:
            options.iteration_log = str(out_dir / "iterations_transient.csv")
        result, problem, _ = solve_transient(
            segnet, scenario, options,
            steady=(steady_result, steady_problem))
        print(f"transient: {result.status} in {result.iterations} "
              f"iterations ({result.wall_time:.2f} s), "
              f"violation {result.violation:.2e}")
        if result.status != "local-optimum":
            print(f"error: transient stage: {result.message}", file=sys.stderr)
            return (EXIT_ITERATION_LIMIT
                    if result.status == "iteration-limit"
                    else EXIT_INFEASIBLE)

    if args.export_nlp:
        problem.export_debug(out_dir / "nlp_debug")

    trajectory = SolutionTrajectory.from_solution(problem, result.x)
    write_solution(trajectory, out_dir)
    report = run_audits(trajectory, segnet, scenario,
                        feasibility_tol=10.0 * args.tol,
                        periodicity_cycles=_periodicity_cycles(scenario))
    (out_dir / "audit.json").write_text(report.to_json())
    (out_dir / "audit.txt").write_text(report.to_text() + "\n")
    print(report.to_text())
    econ = trajectory.economics
    print(f"objective {econ['objective']:.6f} | economic "
          f"{econ['economic_cost_usd']:.2f} $ | compression "
          f"{econ['compression_cost_usd']:.2f} $")
    if not report.passed:
        print("error: post-solve audit failed", file=sys.stderr)
        return EXIT_AUDIT
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except (ParseError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except Exception as exc:                 # pragma: no cover - safety net
        print(f"error: unexpected failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
