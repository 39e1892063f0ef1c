"""Command-line harness: solve scenarios, check derivatives, run benchmarks.

Three subcommands share the scenario loader:

* ``solve`` runs one solver on one scenario and writes ``trace.csv`` (one row
  per solver iteration, plus columns normalized to iteration 0),
  ``solution.csv`` (per-node state and control coordinates) and
  ``summary.json`` into the output directory.
* ``check-derivatives`` compares every distinct node model's analytic
  derivative blocks (f_x, f_u, l_x, l_u) against central finite differences
  at seeded random points.
* ``bench`` times solver iterations across worker counts, reporting the
  median and 95th-percentile wall time per iteration with the derivative
  phase broken out.

Exit codes: 0 converged / all checks passed, 2 iteration budget exhausted,
3 solver failure, 4 I/O error, 5 configuration or validation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import numdiff
from .errors import DimensionMismatch, FddpError, ScenarioError
from .scenarios import (
    BUNDLED_SCENARIOS,
    build_problem,
    build_warm_start,
    bundled_scenario_path,
    load_scenario,
)
from .solver import solve

EXIT_CONVERGED = 0
EXIT_CHECK_FAILED = 1
EXIT_MAX_ITERS = 2
EXIT_SOLVER_FAILURE = 3
EXIT_IO = 4
EXIT_CONFIG = 5

DERIVATIVE_TOLERANCE = 1e-4
DERIVATIVE_FD_STEP = 1e-6

TRACE_COLUMNS = (
    "iteration",
    "cost",
    "gap_l2",
    "step_length",
    "regularization",
    "expected_dj",
    "accepted",
    "cost_norm",
    "gap_l2_norm",
)


def _resolve_scenario_path(spec: str) -> Path:
    """Accept either a filesystem path or the name of a bundled scenario."""
    path = Path(spec)
    if path.exists():
        return path
    if spec in BUNDLED_SCENARIOS:
        return bundled_scenario_path(spec)
    return path  # let load_scenario produce the error message


def _normalized(value: float, reference: float) -> float:
    if reference == 0.0:
        return 0.0
    return value / reference


def write_trace_csv(path, report) -> None:
    """Iteration trace with extra columns normalized to the iteration-0 row."""
    rows = report.rows
    cost0 = rows[0].cost if rows else float("nan")
    gap0 = rows[0].gap_l2 if rows else float("nan")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for r in rows:
            writer.writerow(
                [
                    r.iteration,
                    repr(float(r.cost)),
                    repr(float(r.gap_l2)),
                    repr(float(r.step_length)),
                    repr(float(r.regularization)),
                    repr(float(r.expected_dj)),
                    r.accepted,
                    repr(float(_normalized(r.cost, cost0))),
                    repr(float(_normalized(r.gap_l2, gap0))),
                ]
            )


def write_solution_csv(path, problem, X, U) -> None:
    """Per-node state and control coordinates; empty cells where nu = 0."""
    nx = problem.state.nx
    nu_max = max((m.nu for m in problem.running_models), default=0)
    header = ["node"] + [f"x{i}" for i in range(nx)] + [f"u{i}" for i in range(nu_max)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(problem.N + 1):
            row = [k] + [repr(float(v)) for v in X[k]]
            if k < problem.N:
                u = U[k]
                row += [repr(float(v)) for v in u] + [""] * (nu_max - len(u))
            else:
                row += [""] * nu_max
            writer.writerow(row)


def _solver_settings(scenario, args) -> dict:
    opts = dict(scenario.solver_options)
    if getattr(args, "solver", None):
        opts["solver"] = args.solver
    if getattr(args, "max_iters", None) is not None:
        opts["max_iters"] = args.max_iters
    if getattr(args, "tol", None) is not None:
        opts["tolerance"] = args.tol
    if getattr(args, "threads", None) is not None:
        opts["threads"] = args.threads
    return opts


def cmd_solve(args) -> int:
    try:
        scenario = load_scenario(_resolve_scenario_path(args.scenario))
        problem = build_problem(scenario)
        X0, U0 = build_warm_start(scenario, problem)
    except FddpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    opts = _solver_settings(scenario, args)
    try:
        t0 = time.perf_counter()
        X, U, report = solve(
            problem,
            X0,
            U0,
            solver=opts["solver"],
            max_iters=opts["max_iters"],
            tolerance=opts["tolerance"],
            threads=opts["threads"],
        )
        wall = time.perf_counter() - t0
    except DimensionMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(args.out)
    summary = {
        "scenario": scenario.name,
        "solver": opts["solver"],
        "max_iters": opts["max_iters"],
        "tolerance": opts["tolerance"],
        "threads": opts["threads"],
        "termination": report.termination,
        "iterations": report.iterations,
        "final_cost": report.final_cost,
        "final_gap_l2": report.rows[-1].gap_l2 if report.rows else float("nan"),
        "wall_time_s": wall,
    }
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_trace_csv(out_dir / "trace.csv", report)
        write_solution_csv(out_dir / "solution.csv", problem, X, U)
        with open(out_dir / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        print(f"error: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_IO

    print(
        f"{scenario.name} [{opts['solver']}]: {report.termination} "
        f"after {report.iterations} iterations, cost {report.final_cost:.6e}, "
        f"{wall:.2f}s -> {out_dir}"
    )
    if report.converged:
        return EXIT_CONVERGED
    if report.termination == "max_iters":
        return EXIT_MAX_ITERS
    return EXIT_SOLVER_FAILURE


# ---------------------------------------------------------------------------
# Derivative checking
# ---------------------------------------------------------------------------


def _unique_models(problem):
    """Distinct action models with a label naming where they first appear."""
    seen = {}
    for k, model in enumerate(problem.running_models):
        if id(model) not in seen:
            seen[id(model)] = (f"node {k} ({type(model).__name__})", model)
    label_terminal = f"terminal ({type(problem.terminal_model).__name__})"
    seen[id(problem.terminal_model)] = (label_terminal, problem.terminal_model)
    return list(seen.values())


def check_problem_derivatives(problem, samples: int = 100, seed: int = 0, corrupt=None):
    """Compare analytic derivative blocks against central finite differences.

    Draws `samples` random state/control points per distinct node model
    (tangent perturbations of the measured initial state, standard-normal
    controls), evaluates the analytic f_x, f_u, l_x, l_u blocks, and compares
    each against a finite-difference evaluation with step 1e-6. The error
    metric per block is max|analytic - fd| / max(1, max|fd|).

    `corrupt`, when given, is called as corrupt(label, block, matrix) on every
    analytic block and its return value is compared instead; it exists so
    tests can prove a broken derivative is caught.

    Returns a list of (label, block, max_relative_error) triples, one per
    derivative block of each distinct model.
    """
    state = problem.state
    rng = np.random.default_rng(seed)
    results = []
    for label, model in _unique_models(problem):
        errors = {"f_x": 0.0, "f_u": 0.0, "l_x": 0.0, "l_u": 0.0}
        has_controls = model.nu > 0
        data = model.create_data()
        for _ in range(samples):
            x = state.integrate(problem.x0_measured, 0.3 * rng.standard_normal(state.ndx))
            u = rng.standard_normal(model.nu)
            model.calc(data, x, u)
            model.calc_diff(data, x, u)

            def next_state(xv, uv=u):
                d = model.create_data()
                model.calc(d, xv, uv)
                return d.xnext.copy()

            def cost_of(xv, uv=u):
                d = model.create_data()
                model.calc(d, xv, uv)
                return d.cost

            fd_fx = numdiff.jacobian(
                next_state, x, input_manifold=state, output_manifold=state,
                step=DERIVATIVE_FD_STEP,
            )
            fd_lx = numdiff.gradient(
                cost_of, x, input_manifold=state, step=DERIVATIVE_FD_STEP
            )
            blocks = [("f_x", data.f_x, fd_fx), ("l_x", data.l_x, fd_lx)]
            if has_controls:
                fd_fu = numdiff.jacobian(
                    lambda uv: next_state(x, uv), u, output_manifold=state,
                    step=DERIVATIVE_FD_STEP,
                )
                fd_lu = numdiff.gradient(
                    lambda uv: cost_of(x, uv), u, step=DERIVATIVE_FD_STEP
                )
                blocks += [("f_u", data.f_u, fd_fu), ("l_u", data.l_u, fd_lu)]
            for name, analytic, fd in blocks:
                if corrupt is not None:
                    analytic = corrupt(label, name, analytic)
                denom = max(1.0, float(np.max(np.abs(fd))) if fd.size else 0.0)
                err = float(np.max(np.abs(analytic - fd))) / denom if fd.size else 0.0
                errors[name] = max(errors[name], err)
        for name in ("f_x", "f_u", "l_x", "l_u"):
            if name in ("f_u", "l_u") and not has_controls:
                continue
            results.append((label, name, errors[name]))
    return results


def cmd_check_derivatives(args) -> int:
    try:
        scenario = load_scenario(_resolve_scenario_path(args.scenario))
        problem = build_problem(scenario)
    except FddpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    results = check_problem_derivatives(problem, samples=args.samples, seed=args.seed)
    failed = []
    for label, block, err in results:
        status = "ok" if err <= DERIVATIVE_TOLERANCE else "FAIL"
        print(f"{status:4s} {scenario.name}: {label} {block}: max rel err {err:.3e}")
        if err > DERIVATIVE_TOLERANCE:
            failed.append((label, block, err))
    if failed:
        worst = max(failed, key=lambda t: t[2])
        print(
            f"derivative check failed: {len(failed)} block(s) over {DERIVATIVE_TOLERANCE:g}, "
            f"worst {worst[0]} {worst[1]} at {worst[2]:.3e}",
            file=sys.stderr,
        )
        return EXIT_CHECK_FAILED
    print(f"derivative check passed: {len(results)} blocks within {DERIVATIVE_TOLERANCE:g}")
    return EXIT_CONVERGED


# ---------------------------------------------------------------------------
# Benchmarking
# ---------------------------------------------------------------------------


def run_bench(scenario, problem, X0, U0, thread_counts, trials):
    """Time solver iterations per worker count; returns rows of statistics."""
    opts = scenario.solver_options
    rows = []
    for threads in thread_counts:
        iter_samples = []
        deriv_samples = []
        iterations = 0
        for _ in range(trials):
            _, _, report = solve(
                problem,
                X0,
                U0,
                solver=opts["solver"],
                max_iters=opts["max_iters"],
                tolerance=opts["tolerance"],
                threads=threads,
            )
            iter_samples.extend(report.iter_times)
            deriv_samples.extend(report.deriv_times)
            iterations = report.iterations
        iter_arr = np.asarray(iter_samples) if iter_samples else np.zeros(1)
        deriv_arr = np.asarray(deriv_samples) if deriv_samples else np.zeros(1)
        rows.append(
            {
                "threads": threads,
                "trials": trials,
                "iterations": iterations,
                "median_iter_s": float(np.median(iter_arr)),
                "p95_iter_s": float(np.percentile(iter_arr, 95)),
                "median_deriv_s": float(np.median(deriv_arr)),
                "p95_deriv_s": float(np.percentile(deriv_arr, 95)),
            }
        )
    return rows


def cmd_bench(args) -> int:
    try:
        thread_counts = [int(t) for t in args.threads.split(",") if t.strip()]
    except ValueError:
        print(f"error: --threads must be a comma-separated list of integers, got {args.threads!r}",
              file=sys.stderr)
        return EXIT_CONFIG
    if not thread_counts or any(t < 1 for t in thread_counts):
        print("error: --threads needs at least one positive worker count", file=sys.stderr)
        return EXIT_CONFIG
    if args.trials < 1:
        print("error: --trials must be >= 1", file=sys.stderr)
        return EXIT_CONFIG

    try:
        scenario = load_scenario(_resolve_scenario_path(args.scenario))
        problem = build_problem(scenario)
        X0, U0 = build_warm_start(scenario, problem)
    except FddpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    rows = run_bench(scenario, problem, X0, U0, thread_counts, args.trials)
    fieldnames = ["threads", "trials", "iterations", "median_iter_s", "p95_iter_s",
                  "median_deriv_s", "p95_deriv_s"]

    def emit(fh):
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})

    if args.out:
        try:
            out = Path(args.out)
            out.parent.mkdir(parents=True, exist_ok=True)
            with open(out, "w", newline="") as fh:
                emit(fh)
        except OSError as exc:
            print(f"error: cannot write benchmark table: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"benchmark table written to {out}")
    else:
        emit(sys.stdout)
    return EXIT_CONVERGED


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fddp",
        description="Trajectory optimization over contact-rich mechanical systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run a solver on a scenario and write CSV outputs")
    p_solve.add_argument("--scenario", required=True,
                         help="scenario file path or bundled scenario name")
    p_solve.add_argument("--solver", choices=("ddp", "fddp"), default=None,
                         help="override the scenario's solver choice")
    p_solve.add_argument("--max-iters", type=int, default=None, dest="max_iters")
    p_solve.add_argument("--tol", type=float, default=None)
    p_solve.add_argument("--threads", type=int, default=None,
                         help="derivative evaluation workers")
    p_solve.add_argument("--out", default="out", help="output directory (default: ./out)")
    p_solve.set_defaults(func=cmd_solve)

    p_check = sub.add_parser("check-derivatives",
                             help="finite-difference audit of analytic derivatives")
    p_check.add_argument("--scenario", required=True)
    p_check.add_argument("--samples", type=int, default=100)
    p_check.add_argument("--seed", type=int, default=0)
    p_check.set_defaults(func=cmd_check_derivatives)

    p_bench = sub.add_parser("bench", help="per-iteration timing across worker counts")
    p_bench.add_argument("--scenario", required=True)
    p_bench.add_argument("--threads", default="1",
                         help="comma-separated worker counts, e.g. 1,2,4,8")
    p_bench.add_argument("--trials", type=int, default=3)
    p_bench.add_argument("--out", default=None, help="write the table here instead of stdout")
    p_bench.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
