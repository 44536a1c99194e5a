from __future__ import annotations

import subprocess
import sys

import numpy as np
import pytest
import tomli

from projmech import impact
from projmech.cli import main
from projmech.config import parse_problem
from projmech.projection import build_bundle

TWO_BODY = """
M = [[1.0, 0.0], [0.0, 1.0]]
A = [[-1.0, 1.0]]
qdot_minus = [1.0, 0.0]
"""


def _toml_part(out: str) -> dict:
    return tomli.loads("\n".join(l for l in out.splitlines() if not l.startswith("#")))


@pytest.fixture
def problem(tmp_path):
    def write(extra, body=TWO_BODY):
        p = tmp_path / "problem.toml"
        p.write_text(body + extra)
        return str(p)
    return write


@pytest.fixture
def ball(tmp_path):
    p = tmp_path / "ball.toml"
    p.write_text('[model]\nname = "bouncing_ball"\n[model.params]\nrestitution = 0.5\n[integrator]\nt_end = 0.6\n')
    return str(p)


# -- simulate ---------------------------------------------------------------


def test_simulate_writes_outputs(ball, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["simulate", ball, "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "impacts = 1" in text
    assert (out / "trajectory.csv").exists() and (out / "events.jsonl").exists()
    assert len((out / "events.jsonl").read_text().splitlines()) == 1


def test_simulate_override_reaches_summary(ball, tmp_path, capsys):
    assert main(["simulate", "--config", ball, "--override", "integrator.step_size=0.0005", "--out", str(tmp_path)]) == 0
    assert "step_size = 0.0005" in capsys.readouterr().out


def test_simulate_refuses_superelastic_restitution(ball, tmp_path, capsys):
    args = ["simulate", ball, "--override", "model.params.restitution=1.5", "--out", str(tmp_path)]
    assert main(args) == 4
    assert "energetic" in capsys.readouterr().err
    assert main(args + ["--allow-inconsistent"]) == 0


def test_simulate_exit_codes(ball, tmp_path, capsys):
    assert main(["simulate", str(tmp_path / "none.toml")]) == 1
    assert main(["simulate", ball, "--override", "integrator.step_size=-1"]) == 2
    assert "integrator.step_size" in capsys.readouterr().err
    assert main(["simulate", ball, "--override", "integrator.nope=1"]) == 2
    assert main(["simulate", ball, "--out", str(tmp_path), "--override", "integrator.method=\"dopri5\"",
                 "--override", "integrator.rtol=1e-300", "--override", "integrator.atol=1e-300",
                 "--override", "integrator.min_step=0.01"]) == 3
    assert "stalled state" in capsys.readouterr().err


def test_missing_file_argument_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["simulate"])
    assert exc.value.code == 2


# -- impact -----------------------------------------------------------------


def test_impact_elastic_two_body(problem, capsys):
    assert main(["impact", problem("e = 1.0\n")]) == 0
    doc = _toml_part(capsys.readouterr().out)
    np.testing.assert_allclose(doc["record"]["qdot_plus"], [0.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(doc["record"]["i_f"], [-1.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(doc["record"]["i_lambda"], [1.0], atol=1e-12)


def test_impact_floor_example(problem, capsys):
    body = "M = [[2.0, 0.0], [0.0, 8.0]]\nA = [[0.0, 1.0]]\nqdot_minus = [3.0, -2.0]\n"
    assert main(["impact", problem("e = 0.5\n", body)]) == 0
    doc = _toml_part(capsys.readouterr().out)
    np.testing.assert_allclose(doc["record"]["qdot_plus"], [3.0, 1.0], atol=1e-12)
    assert doc["record"]["W_loss"] == pytest.approx(-12.0, abs=1e-12)
    assert doc["record"]["gamma"] == pytest.approx(0.52, abs=1e-12)


def test_impact_output_round_trips(problem, capsys):
    path = problem("E = [[0.5]]\n")
    assert main(["impact", path]) == 0
    doc = _toml_part(capsys.readouterr().out)
    assert doc["consistency"]["feasible"]
    spec = parse_problem({k: v for k, v in doc.items() if k not in ("record", "consistency")})
    prob = impact.ImpactProblem(M=spec.M, bundle=build_bundle(spec.M, spec.A), qdot_minus=spec.qdot_minus, E=spec.E)
    rec = impact.resolve_impact(prob)
    np.testing.assert_array_equal(rec.qdot_plus, doc["record"]["qdot_plus"])
    np.testing.assert_allclose(rec.qdot_plus, [0.25, 0.75], atol=1e-12)


def test_impact_refuses_infeasible_matrix(problem, capsys):
    path = problem("E = [[1.2]]\n")
    assert main(["impact", path]) == 4
    err = capsys.readouterr().err
    worst = float(err.split("lambda_max(E Q E - Q) = ")[1].split()[0])
    assert worst == pytest.approx(0.22, abs=1e-12)
    assert main(["impact", path, "--allow-inconsistent"]) == 0
    doc = _toml_part(capsys.readouterr().out)
    assert not doc["consistency"]["feasible"]
    assert doc["record"]["gamma"] > 1.0


def test_impact_validation_errors(problem, capsys):
    assert main(["impact", problem("e = 1.5\n")]) == 2
    assert main(["impact", problem("")]) == 2
    assert main(["impact", problem("e = 0.5\nE = [[0.5]]\n")]) == 2


# -- check-restitution -----------------------------------------------------


def test_check_restitution_feasible(problem, capsys):
    assert main(["check-restitution", problem("E = [[1.0]]\n")]) == 0
    doc = _toml_part(capsys.readouterr().out)
    assert doc["feasible"]
    assert doc["lambda_max"] <= doc["tol"]


def test_check_restitution_infeasible(problem, capsys):
    assert main(["check-restitution", problem("E = [[1.2]]\n")]) == 4
    out = capsys.readouterr().out
    assert "INFEASIBLE" in out
    doc = _toml_part(out)
    assert doc["lambda_max"] == pytest.approx(0.22, abs=1e-12)
    np.testing.assert_allclose(doc["Q"], [[0.5]], atol=1e-12)


def test_check_restitution_scalar(problem, capsys):
    assert main(["check-restitution", problem("e = 0.7\n")]) == 0


# -- verify -----------------------------------------------------------------


def test_verify_all_passes_and_is_deterministic(capsys):
    assert main(["verify", "all", "--seed", "11", "--count", "40"]) == 0
    first = capsys.readouterr().out
    assert main(["verify", "all", "--seed", "11", "--count", "40"]) == 0
    assert capsys.readouterr().out == first
    assert "overall: PASS" in first


def test_verify_seed_changes_draws(capsys):
    main(["verify", "projections", "--seed", "1", "--count", "20"])
    a = capsys.readouterr().out
    main(["verify", "projections", "--seed", "2", "--count", "20"])
    assert capsys.readouterr().out != a


def test_verify_detects_sign_error(monkeypatch, capsys):
    def flipped(prob):
        b, qm, e = prob.bundle, prob.qdot_minus, prob.e_global
        return impact._finish(prob, qm + (e + 1.0) * (b.S @ qm), -e * (b.A @ qm))

    monkeypatch.setattr(impact, "resolve_impact_global", flipped)
    assert main(["verify", "impacts", "--count", "20"]) == 5
    assert "overall: FAIL" in capsys.readouterr().out


def test_verify_rejects_unknown_suite():
    with pytest.raises(SystemExit) as exc:
        main(["verify", "nothing"])
    assert exc.value.code == 2


def test_console_entry_point(problem):
    proc = subprocess.run([sys.executable, "-m", "projmech.cli", "impact", problem("e = 0.0\n")],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert _toml_part(proc.stdout)["record"]["W_loss"] == pytest.approx(-0.25)
