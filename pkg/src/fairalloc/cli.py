"""Command-line interface.

Subcommands: ``check`` (validate a scenario and report feasibility),
``solve`` (distributed or centralized solve, writing plan and
trajectory artifacts), ``online`` (solve with scheduled network
revisions), and ``compare`` (contrast allocations across fairness
weights).

Exit codes: 0 success, 1 parse/usage errors, 2 validation or
feasibility failures, 3 solver did not converge (artifacts are still
written).
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .admm import SolverOptions, run
from .metrics import IterationRecord, Trajectory, export_csv, residual_to_reference
from .model import (
    FeasibilityError,
    Scenario,
    ScenarioError,
    check_feasibility,
    social_utility,
)
from .online import EventError, run_online
from .oracle import OracleOptions, solve_centralized
from .scenario_io import (
    ParseError,
    dump_plan,
    load_events,
    load_plan,
    load_scenario,
)

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_INVALID = 2
EXIT_NO_CONVERGENCE = 3


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors map to exit code 1."""

    def error(self, message):
        raise ParseError(message)


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--eta", type=float, default=1.0, help="consensus penalty weight (default 1.0)"
    )
    p.add_argument(
        "--tol",
        type=float,
        default=None,
        help="convergence tolerance (default 1e-6 distributed, 1e-10 centralized)",
    )
    p.add_argument(
        "--max-iters", type=int, default=10000, help="iteration budget (default 10000)"
    )
    p.add_argument(
        "--record-every",
        type=int,
        default=1,
        help="trajectory recording cadence (default 1)",
    )
    p.add_argument(
        "--threads",
        type=int,
        default=1,
        help="worker threads for the per-node solves (results are identical "
        "for any value)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="fairalloc",
        description="Fair resource allocation over bipartite networks.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_check = sub.add_parser(
        "check", help="validate a scenario file and report feasibility"
    )
    p_check.add_argument("scenario", help="scenario JSON file")
    p_check.set_defaults(func=cmd_check)

    p_solve = sub.add_parser("solve", help="solve a scenario and write artifacts")
    p_solve.add_argument("scenario", help="scenario JSON file")
    p_solve.add_argument(
        "--out",
        required=True,
        help="artifact prefix: writes <out>.plan.json and <out>.trajectory.csv",
    )
    p_solve.add_argument(
        "--mode",
        choices=("distributed", "centralized"),
        default="distributed",
        help="solver to use (default distributed)",
    )
    _add_solver_flags(p_solve)
    p_solve.add_argument(
        "--reference",
        default="none",
        help="'none', 'centralized', or a plan JSON file; adds the "
        "reference_residual trajectory column",
    )
    p_solve.set_defaults(func=cmd_solve)

    p_online = sub.add_parser(
        "online", help="solve while applying scheduled network revisions"
    )
    p_online.add_argument("scenario", help="scenario JSON file")
    p_online.add_argument("--events", required=True, help="event schedule JSON file")
    p_online.add_argument(
        "--out",
        required=True,
        help="artifact prefix: writes <out>.plan.json and <out>.trajectory.csv",
    )
    _add_solver_flags(p_online)
    p_online.add_argument(
        "--reference",
        choices=("none", "centralized"),
        default="none",
        help="track per-segment distance to the centralized optimum",
    )
    p_online.set_defaults(func=cmd_online)

    p_compare = sub.add_parser(
        "compare", help="contrast centralized allocations across fairness weights"
    )
    p_compare.add_argument("scenario", help="scenario JSON file")
    p_compare.add_argument(
        "--omega",
        type=float,
        action="append",
        help="uniform fairness weight to apply to every target "
        "(repeatable; default: 0 and 3)",
    )
    p_compare.add_argument(
        "--tol", type=float, default=1e-10, help="solver tolerance (default 1e-10)"
    )
    p_compare.add_argument(
        "--max-iters", type=int, default=20000, help="iteration budget"
    )
    p_compare.set_defaults(func=cmd_compare)
    return parser


def _resolve_reference(spec: str, scenario: Scenario):
    if spec == "none":
        return None
    if spec == "centralized":
        return solve_centralized(scenario).plan
    return load_plan(spec)


def cmd_check(args) -> int:
    scenario = load_scenario(args.scenario)
    print(
        "scenario ok: %d targets, %d sources, %d edges, horizon %d"
        % (
            scenario.n_targets,
            scenario.n_sources,
            scenario.n_edges,
            scenario.horizon,
        )
    )
    report = check_feasibility(scenario)
    for desc, ok in report.checks:
        print("  [%s] %s" % ("ok" if ok else "FAIL", desc))
    if not report.feasible:
        print("feasibility is not guaranteed", file=sys.stderr)
        return EXIT_INVALID
    print("feasibility conditions satisfied")
    return EXIT_OK


def cmd_solve(args) -> int:
    scenario = load_scenario(args.scenario)
    reference = _resolve_reference(args.reference, scenario)
    if args.mode == "centralized":
        tol = 1e-10 if args.tol is None else args.tol
        result = solve_centralized(
            scenario, OracleOptions(tol=tol, max_iters=args.max_iters)
        )
        ref_res = (
            None
            if reference is None
            else residual_to_reference(result.plan, reference)
        )
        trajectory = Trajectory(
            (
                IterationRecord(
                    iteration=result.iterations,
                    social_utility=result.objective,
                    primal_residual=result.pg_norm,
                    reference_residual=ref_res,
                ),
            )
        )
        dump_plan(result.plan, args.out + ".plan.json")
        export_csv(trajectory, args.out + ".trajectory.csv")
        print(
            "centralized solve: objective %.10g after %d iterations"
            % (result.objective, result.iterations)
        )
        if not result.converged:
            print("did not reach tolerance", file=sys.stderr)
            return EXIT_NO_CONVERGENCE
        return EXIT_OK
    tol = 1e-6 if args.tol is None else args.tol
    options = SolverOptions(
        eta=args.eta,
        tol=tol,
        max_iters=args.max_iters,
        record_every=args.record_every,
        threads=args.threads,
    )
    result = run(scenario, options, reference=reference)
    dump_plan(result.plan, args.out + ".plan.json")
    export_csv(result.trajectory, args.out + ".trajectory.csv")
    utility = social_utility(result.plan, scenario)
    if result.converged:
        print(
            "converged after %d iterations: social utility %.10g"
            % (result.iterations, utility)
        )
        return EXIT_OK
    print(
        "stopped after %d iterations without converging (social utility %.10g)"
        % (result.iterations, utility)
    )
    print("did not converge within --max-iters", file=sys.stderr)
    return EXIT_NO_CONVERGENCE


def cmd_online(args) -> int:
    scenario = load_scenario(args.scenario)
    schedule = load_events(args.events)
    tol = 1e-6 if args.tol is None else args.tol
    options = SolverOptions(
        eta=args.eta,
        tol=tol,
        max_iters=args.max_iters,
        record_every=args.record_every,
        threads=args.threads,
    )
    reference = None if args.reference == "none" else args.reference
    result = run_online(scenario, schedule, options, reference=reference)
    dump_plan(result.plan, args.out + ".plan.json")
    export_csv(result.trajectory, args.out + ".trajectory.csv")
    print(
        "online run: %d segments, %d iterations"
        % (len(result.scenarios), result.iterations)
    )
    if result.converged:
        return EXIT_OK
    print("final segment did not converge", file=sys.stderr)
    return EXIT_NO_CONVERGENCE


def cmd_compare(args) -> int:
    scenario = load_scenario(args.scenario)
    omegas = args.omega if args.omega else [0.0, 3.0]
    for w in omegas:
        if w < 0:
            raise ParseError(f"--omega must be >= 0, got {w:g}")
    opts = OracleOptions(tol=args.tol, max_iters=args.max_iters)
    print("fairness comparison (uniform weight on every target)")
    for w in omegas:
        weighted = Scenario(
            targets=scenario.targets,
            sources=scenario.sources,
            edges=scenario.edges,
            target_bounds=scenario.target_bounds,
            source_bounds=scenario.source_bounds,
            fairness_weights=tuple(w for _ in scenario.targets),
            horizon=scenario.horizon,
        )
        result = solve_centralized(weighted, opts)
        totals = {t: 0.0 for t in weighted.targets}
        for (t, _, _), amount in result.plan.amounts.items():
            totals[t] += amount
        shares = " ".join("%s=%.6g" % (t, totals[t]) for t in weighted.targets)
        print("  omega=%-8g objective=%.10g  totals: %s" % (w, result.objective, shares))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ScenarioError, FeasibilityError, EventError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
