"""Tests for scenario files (schema, validation, assembly, warm starts) and
the command-line harness (solve, check-derivatives, bench, exit codes).
"""

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from fddp import cli
from fddp.action import (
    ConstrainedMechanicalDynamics,
    FreeMechanicalDynamics,
    ImpulseActionModel,
    IntegratedActionModel,
)
from fddp.cli import (
    EXIT_CHECK_FAILED,
    EXIT_CONFIG,
    EXIT_CONVERGED,
    EXIT_IO,
    EXIT_MAX_ITERS,
    TRACE_COLUMNS,
    check_problem_derivatives,
    run_bench,
)
from fddp.errors import ScenarioError
from fddp.scenarios import (
    BUNDLED_SCENARIOS,
    build_problem,
    build_warm_start,
    bundled_scenario_path,
    load_and_build,
    load_scenario,
)

GRAVITY = 9.81


def pendulum_doc(**overrides):
    doc = {
        "name": "case",
        "model": {"id": "pendulum", "params": {}},
        "horizon": 10,
        "dt": 0.05,
        "x0": [0.0, 0.0],
        "costs": {
            "running": [
                {"kind": "state_regularization", "weight": 1.0, "reference": [1.0, 0.0]},
                {"kind": "control_regularization", "weight": 0.1},
            ],
            "terminal": [
                {"kind": "state_regularization", "weight": 10.0, "reference": [1.0, 0.0]}
            ],
        },
    }
    doc.update(overrides)
    return doc


def write_doc(tmp_path, doc, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


# ---------------------------------------------------------------------------
# scenario loading
# ---------------------------------------------------------------------------


def test_bundled_pendulum_scenario_fields():
    scenario = load_scenario(bundled_scenario_path("pendulum_swingup"))
    assert scenario.name == "pendulum_swingup"
    assert scenario.model_id == "pendulum"
    assert scenario.horizon == 200
    assert scenario.dts == [0.01] * 200
    assert scenario.warm_start["policy"] == "quasi_static_interpolation"
    assert scenario.solver_options["solver"] == "fddp"
    np.testing.assert_array_equal(scenario.x0, [0.0, 0.0])


def test_every_bundled_scenario_loads_and_builds():
    for name in BUNDLED_SCENARIOS:
        scenario, problem, X, U = load_and_build(bundled_scenario_path(name))
        assert scenario.name == name
        expected_nodes = scenario.horizon + len(scenario.switches)
        assert problem.N == expected_nodes
        assert len(X) == problem.N + 1
        assert len(U) == problem.N
        for k, model in enumerate(problem.running_models):
            assert U[k].shape == (model.nu,)
        cost, gaps = problem.calc(X, U)
        assert np.isfinite(cost)


def test_unknown_bundled_name_is_rejected():
    with pytest.raises(ScenarioError, match="unknown bundled scenario"):
        bundled_scenario_path("triple_pendulum")


def test_invalid_json_reports_the_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"name": "x",\n  broken\n}')
    with pytest.raises(ScenarioError, match="invalid JSON"):
        load_scenario(path)


def test_missing_file_is_a_scenario_error(tmp_path):
    with pytest.raises(ScenarioError, match="cannot read scenario file"):
        load_scenario(tmp_path / "absent.json")


def test_unknown_model_id_is_named(tmp_path):
    doc = pendulum_doc(model={"id": "hexapod", "params": {}})
    with pytest.raises(ScenarioError, match="unknown model id 'hexapod'"):
        load_scenario(write_doc(tmp_path, doc))


def test_schema_violations_carry_field_locations(tmp_path):
    cases = [
        (lambda d: d.pop("name"), "missing required field 'name'"),
        (lambda d: d.update(horizon=0), "horizon must be >= 1"),
        (lambda d: d.update(dt=-0.1), "every step size must be > 0"),
        (lambda d: d.update(dt=[0.05] * 3), "dt list must have horizon entries"),
        (lambda d: d.update(x0="origin"), "x0 must be a coordinate list"),
        (
            lambda d: d["costs"]["running"].append({"kind": "energy", "weight": 1.0}),
            "unknown cost kind 'energy'",
        ),
        (
            lambda d: d["costs"]["running"].append(
                {"kind": "control_regularization", "weight": -2.0}
            ),
            "cost weight must be >= 0",
        ),
        (
            lambda d: d.update(warm_start={"policy": "oracle"}),
            "unknown warm-start policy 'oracle'",
        ),
        (
            lambda d: d.update(warm_start={"policy": "file"}),
            "file warm start needs a 'path'",
        ),
        (lambda d: d.update(solver={"solver": "sqp"}), "unknown solver 'sqp'"),
        (
            lambda d: d.update(solver={"max_iters": -2}),
            "max_iters must be an integer >= 0",
        ),
        (lambda d: d.update(solver={"threads": 0}), "threads must be an integer >= 1"),
        (lambda d: d.update(solver={"tolerance": 0.0}), "tolerance must be > 0"),
    ]
    for i, (mutate, message) in enumerate(cases):
        doc = pendulum_doc()
        mutate(doc)
        path = write_doc(tmp_path, doc, name=f"case_{i}.json")
        with pytest.raises(ScenarioError, match=message):
            load_scenario(path)


def test_phase_intervals_must_partition_the_horizon(tmp_path):
    overlapping = pendulum_doc(
        phases=[{"start": 0, "end": 6}, {"start": 4, "end": 10}]
    )
    with pytest.raises(ScenarioError, match=r"phases 0 and 1 overlap on \[4, 6\)"):
        load_scenario(write_doc(tmp_path, overlapping, "overlap.json"))

    gap = pendulum_doc(phases=[{"start": 0, "end": 4}, {"start": 6, "end": 10}])
    with pytest.raises(ScenarioError, match=r"nodes \[4, 6\) uncovered"):
        load_scenario(write_doc(tmp_path, gap, "gap.json"))

    late_start = pendulum_doc(phases=[{"start": 2, "end": 10}])
    with pytest.raises(ScenarioError, match="first phase must start at node 0"):
        load_scenario(write_doc(tmp_path, late_start, "late.json"))

    short_end = pendulum_doc(phases=[{"start": 0, "end": 9}])
    with pytest.raises(ScenarioError, match=r"last phase must end at the horizon \(10\)"):
        load_scenario(write_doc(tmp_path, short_end, "short.json"))

    backwards = pendulum_doc(phases=[{"start": 5, "end": 5}])
    with pytest.raises(ScenarioError, match="0 <= start < end <= horizon"):
        load_scenario(write_doc(tmp_path, backwards, "bad_interval.json"))


def test_switch_validation(tmp_path):
    two_phase = dict(
        phases=[{"start": 0, "end": 5}, {"start": 5, "end": 10}],
    )
    off_boundary = pendulum_doc(**two_phase, switches=[{"node": 7}])
    with pytest.raises(
        ScenarioError, match=r"switch node 7 is not a phase boundary \(boundaries: \[5\]\)"
    ):
        load_scenario(write_doc(tmp_path, off_boundary, "off.json"))

    bad_restitution = pendulum_doc(
        **two_phase, switches=[{"node": 5, "restitution": 1.5}]
    )
    with pytest.raises(ScenarioError, match=r"restitution must lie in \[0, 1\]"):
        load_scenario(write_doc(tmp_path, bad_restitution, "rest.json"))

    duplicated = pendulum_doc(**two_phase, switches=[{"node": 5}, {"node": 5}])
    with pytest.raises(ScenarioError, match="duplicate switch at node 5"):
        load_scenario(write_doc(tmp_path, duplicated, "dup.json"))


def test_contacts_require_a_mechanical_model(tmp_path):
    doc = {
        "name": "linear_with_contacts",
        "model": {"id": "lqr_chain", "params": {}},
        "horizon": 10,
        "dt": 0.05,
        "costs": {"running": [{"kind": "control_regularization", "weight": 0.1}]},
        "phases": [{"start": 0, "end": 10, "contacts": [{"frame": "foot"}]}],
    }
    with pytest.raises(ScenarioError, match="contacts/switches require a mechanical model"):
        load_scenario(write_doc(tmp_path, doc))


def test_contact_frame_must_exist_on_the_model(tmp_path):
    doc = {
        "name": "monoped_bad_frame",
        "model": {"id": "planar_monoped", "params": {}},
        "horizon": 10,
        "dt": 0.02,
        "costs": {"running": [{"kind": "control_regularization", "weight": 0.1}]},
        "phases": [{"start": 0, "end": 10, "contacts": [{"frame": "hand"}]}],
    }
    with pytest.raises(ScenarioError, match="has no frame 'hand'"):
        load_scenario(write_doc(tmp_path, doc))


# ---------------------------------------------------------------------------
# problem assembly
# ---------------------------------------------------------------------------


def test_monoped_assembly_interleaves_the_impulse_node():
    scenario = load_scenario(bundled_scenario_path("monoped_hop"))
    problem = build_problem(scenario)
    models = problem.running_models
    assert problem.N == 91

    assert isinstance(models[50], ImpulseActionModel)
    for k in range(50):
        assert isinstance(models[k], IntegratedActionModel)
    # Stance nodes run constrained dynamics, flight nodes free dynamics.
    for k in range(40):
        assert isinstance(models[k].dynamics, ConstrainedMechanicalDynamics)
    for k in range(40, 50):
        assert isinstance(models[k].dynamics, FreeMechanicalDynamics)
    for k in range(51, 91):
        assert isinstance(models[k].dynamics, ConstrainedMechanicalDynamics)

    # One model object per (phase, dt): nodes within a phase share it.
    assert len({id(models[k]) for k in range(40)}) == 1
    assert len({id(models[k]) for k in range(40, 50)}) == 1
    assert len({id(models[k]) for k in range(51, 91)}) == 1
    assert id(models[0]) != id(models[51])


def test_assembly_defaults_x0_to_the_nominal_state(tmp_path):
    doc = {
        "name": "monoped_default_x0",
        "model": {"id": "planar_monoped", "params": {}},
        "horizon": 5,
        "dt": 0.02,
        "costs": {"running": [{"kind": "control_regularization", "weight": 0.1}]},
    }
    scenario = load_scenario(write_doc(tmp_path, doc))
    problem = build_problem(scenario)
    from fddp.systems import build_system

    np.testing.assert_array_equal(
        problem.x0_measured, build_system("planar_monoped", {}).nominal_state()
    )


# ---------------------------------------------------------------------------
# warm starts
# ---------------------------------------------------------------------------


def test_zeros_warm_start_holds_the_measured_state():
    scenario, problem, X, U = load_and_build(bundled_scenario_path("double_integrator"))
    for x in X:
        np.testing.assert_array_equal(x, problem.x0_measured)
    for u in U:
        np.testing.assert_array_equal(u, np.zeros(2))


def test_quasi_static_interpolation_on_the_pendulum():
    scenario, problem, X, U = load_and_build(bundled_scenario_path("pendulum_swingup"))
    M = problem.N
    target = np.array([np.pi, 0.0])
    for k in range(M + 1):
        np.testing.assert_allclose(X[k], (k / M) * target, atol=1e-12)
    # Holding torque balances gravity (mass = length = 1, velocity zero).
    for k in range(M):
        np.testing.assert_allclose(U[k], [GRAVITY * np.sin(X[k][0])], atol=1e-5)


def test_interpolation_falls_back_to_zero_controls_in_flight():
    scenario, problem, X, U = load_and_build(bundled_scenario_path("monoped_hop"))
    # Flight nodes (40..49) cannot hold a pose without ground forces.
    for k in range(40, 50):
        np.testing.assert_array_equal(U[k], np.zeros(2))
    assert U[50].shape == (0,)  # impulse node has no controls


def test_file_warm_start_roundtrip(tmp_path):
    doc = pendulum_doc(warm_start={"policy": "file", "path": "guess.json"})
    path = write_doc(tmp_path, doc)
    rng = np.random.default_rng(3)
    X_ref = rng.standard_normal((11, 2))
    U_ref = rng.standard_normal((10, 1))
    (tmp_path / "guess.json").write_text(
        json.dumps({"X": X_ref.tolist(), "U": U_ref.tolist()})
    )
    scenario = load_scenario(path)
    problem = build_problem(scenario)
    X, U = build_warm_start(scenario, problem)
    np.testing.assert_array_equal(np.array(X), X_ref)
    np.testing.assert_array_equal(np.array(U), U_ref)


def test_file_warm_start_length_mismatch(tmp_path):
    doc = pendulum_doc(warm_start={"policy": "file", "path": "guess.json"})
    path = write_doc(tmp_path, doc)
    (tmp_path / "guess.json").write_text(
        json.dumps({"X": [[0.0, 0.0]] * 4, "U": [[0.0]] * 3})
    )
    scenario = load_scenario(path)
    problem = build_problem(scenario)
    with pytest.raises(ScenarioError, match=r"\(4, 3\) do not match the problem \(11, 10\)"):
        build_warm_start(scenario, problem)


# ---------------------------------------------------------------------------
# CLI: solve
# ---------------------------------------------------------------------------


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_cli_solve_writes_trace_solution_and_summary(tmp_path, capsys):
    out = tmp_path / "out"
    rc = cli.main(["solve", "--scenario", "double_integrator", "--out", str(out)])
    assert rc == EXIT_CONVERGED
    assert "converged" in capsys.readouterr().out

    header, rows = read_csv(out / "trace.csv")
    assert tuple(header) == TRACE_COLUMNS
    iterations = [int(r[0]) for r in rows]
    assert iterations == list(range(len(rows)))
    cost0 = float(rows[0][1])
    gap0 = float(rows[0][2])
    for r in rows:
        # Normalized columns recompute exactly from the raw ones.
        assert float(r[7]) == float(r[1]) / cost0
        assert float(r[8]) == (0.0 if gap0 == 0.0 else float(r[2]) / gap0)
    assert int(rows[-1][6]) == 1

    header, rows = read_csv(out / "solution.csv")
    assert header[:5] == ["node", "x0", "x1", "x2", "x3"]
    assert header[5:] == ["u0", "u1"]
    assert len(rows) == 51
    assert rows[-1][5] == "" and rows[-1][6] == ""
    # Terminal state reached the regulated origin reasonably closely.
    terminal = np.array([float(v) for v in rows[-1][1:5]])
    assert np.linalg.norm(terminal) < 0.2

    summary = json.loads((out / "summary.json").read_text())
    assert summary["scenario"] == "double_integrator"
    assert summary["termination"] == "converged"
    assert summary["solver"] == "fddp"
    assert summary["iterations"] >= 1
    assert summary["wall_time_s"] > 0.0


def test_cli_solve_solver_override(tmp_path, capsys):
    out = tmp_path / "out"
    rc = cli.main(
        ["solve", "--scenario", "double_integrator", "--solver", "ddp", "--out", str(out)]
    )
    assert rc == EXIT_CONVERGED
    capsys.readouterr()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["solver"] == "ddp"
    # A classical run keeps every iterate feasible.
    _, rows = read_csv(out / "trace.csv")
    for r in rows:
        assert float(r[2]) <= 1e-12


def test_cli_solve_iteration_budget_exit(tmp_path, capsys):
    out = tmp_path / "out"
    rc = cli.main(
        ["solve", "--scenario", "pendulum_swingup", "--max-iters", "0", "--out", str(out)]
    )
    assert rc == EXIT_MAX_ITERS
    capsys.readouterr()
    _, rows = read_csv(out / "trace.csv")
    assert len(rows) == 1
    summary = json.loads((out / "summary.json").read_text())
    assert summary["termination"] == "max_iters"
    assert summary["iterations"] == 0


def test_cli_solve_unwritable_output_exits_io(tmp_path, capsys):
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    rc = cli.main(
        ["solve", "--scenario", "double_integrator", "--out", str(blocker / "sub")]
    )
    assert rc == EXIT_IO
    assert "cannot write outputs" in capsys.readouterr().err


def test_cli_solve_config_errors(tmp_path, capsys):
    rc = cli.main(["solve", "--scenario", str(tmp_path / "none.json"), "--out", str(tmp_path)])
    assert rc == EXIT_CONFIG
    assert "error:" in capsys.readouterr().err

    rc = cli.main(
        ["solve", "--scenario", "double_integrator", "--max-iters", "-3", "--out", str(tmp_path)]
    )
    assert rc == EXIT_CONFIG
    capsys.readouterr()


def test_cli_entry_point_runs_as_a_module(tmp_path):
    out = tmp_path / "out"
    proc = subprocess.run(
        [
            sys.executable,
            "-m",
            "fddp",
            "solve",
            "--scenario",
            "double_integrator",
            "--max-iters",
            "0",
            "--out",
            str(out),
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == EXIT_MAX_ITERS
    assert (out / "trace.csv").exists()


def test_trace_floats_roundtrip_exactly(tmp_path, capsys):
    out = tmp_path / "out"
    cli.main(["solve", "--scenario", "lqr_chain", "--out", str(out)])
    capsys.readouterr()
    _, rows = read_csv(out / "trace.csv")
    for r in rows:
        for cell in r[1:6]:
            value = float(cell)
            assert repr(value) == cell


def test_solution_is_bit_identical_across_worker_counts(tmp_path, capsys):
    digests = []
    for threads in (1, 4):
        out = tmp_path / f"t{threads}"
        rc = cli.main(
            [
                "solve",
                "--scenario",
                "double_integrator",
                "--threads",
                str(threads),
                "--out",
                str(out),
            ]
        )
        assert rc == EXIT_CONVERGED
        capsys.readouterr()
        digests.append(
            ((out / "trace.csv").read_bytes(), (out / "solution.csv").read_bytes())
        )
    assert digests[0][0] == digests[1][0]
    assert digests[0][1] == digests[1][1]


# ---------------------------------------------------------------------------
# CLI: check-derivatives
# ---------------------------------------------------------------------------


def test_check_derivatives_passes_on_the_pendulum(capsys):
    rc = cli.main(
        ["check-derivatives", "--scenario", "pendulum_swingup", "--samples", "100", "--seed", "42"]
    )
    assert rc == EXIT_CONVERGED
    out = capsys.readouterr().out
    assert "derivative check passed" in out
    assert "FAIL" not in out


def test_check_derivatives_is_exact_on_linear_dynamics(capsys):
    rc = cli.main(
        ["check-derivatives", "--scenario", "lqr_chain", "--samples", "20", "--seed", "0"]
    )
    assert rc == EXIT_CONVERGED
    capsys.readouterr()
    scenario = load_scenario(bundled_scenario_path("lqr_chain"))
    problem = build_problem(scenario)
    for label, block, err in check_problem_derivatives(problem, samples=20, seed=0):
        if block in ("f_x", "f_u"):
            assert err <= 1e-9, (label, block, err)


def test_corrupted_derivative_is_caught():
    scenario = load_scenario(bundled_scenario_path("pendulum_swingup"))
    problem = build_problem(scenario)

    def corrupt(label, block, matrix):
        if block == "f_u" and label.startswith("node 0"):
            return matrix + 1.0
        return matrix

    results = check_problem_derivatives(problem, samples=3, seed=0, corrupt=corrupt)
    by_block = {(label, block): err for label, block, err in results}
    bad = [err for (label, block), err in by_block.items() if block == "f_u"]
    assert max(bad) > 1e-4
    clean = [err for (label, block), err in by_block.items() if block != "f_u"]
    assert max(clean) <= 1e-4


def test_check_derivatives_cli_reports_failures(monkeypatch, capsys):
    def fake_check(problem, samples=100, seed=0, corrupt=None):
        return [("node 0 (IntegratedActionModel)", "f_u", 0.5)]

    monkeypatch.setattr(cli, "check_problem_derivatives", fake_check)
    rc = cli.main(["check-derivatives", "--scenario", "pendulum_swingup"])
    assert rc == EXIT_CHECK_FAILED
    captured = capsys.readouterr()
    assert "FAIL" in captured.out
    assert "f_u" in captured.err


def test_check_derivatives_bad_scenario_exits_config(tmp_path, capsys):
    rc = cli.main(["check-derivatives", "--scenario", str(tmp_path / "nope.json")])
    assert rc == EXIT_CONFIG
    capsys.readouterr()


# ---------------------------------------------------------------------------
# CLI: bench
# ---------------------------------------------------------------------------


def test_bench_writes_a_one_row_table(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    rc = cli.main(
        ["bench", "--scenario", "lqr_chain", "--threads", "1", "--trials", "1", "--out", str(out)]
    )
    assert rc == EXIT_CONVERGED
    capsys.readouterr()
    header, rows = read_csv(out)
    assert header == [
        "threads",
        "trials",
        "iterations",
        "median_iter_s",
        "p95_iter_s",
        "median_deriv_s",
        "p95_deriv_s",
    ]
    assert len(rows) == 1
    assert int(rows[0][0]) == 1
    assert float(rows[0][3]) > 0.0
    assert float(rows[0][5]) <= float(rows[0][3])


def test_bench_prints_to_stdout_without_out(capsys):
    rc = cli.main(["bench", "--scenario", "lqr_chain", "--threads", "1", "--trials", "1"])
    assert rc == EXIT_CONVERGED
    out = capsys.readouterr().out
    assert out.startswith("threads,trials,iterations")


def test_bench_validates_its_arguments(capsys):
    assert cli.main(["bench", "--scenario", "lqr_chain", "--threads", "0"]) == EXIT_CONFIG
    assert cli.main(["bench", "--scenario", "lqr_chain", "--threads", "a,b"]) == EXIT_CONFIG
    assert (
        cli.main(["bench", "--scenario", "lqr_chain", "--threads", "1", "--trials", "0"])
        == EXIT_CONFIG
    )
    capsys.readouterr()


def test_bench_rows_cover_each_worker_count():
    scenario, problem, X0, U0 = load_and_build(bundled_scenario_path("lqr_chain"))
    rows = run_bench(scenario, problem, X0, U0, [1, 2], trials=1)
    assert [row["threads"] for row in rows] == [1, 2]
    for row in rows:
        assert row["iterations"] >= 1
        assert row["p95_iter_s"] >= row["median_iter_s"] > 0.0
