from __future__ import annotations

import numpy as np
import pytest
import tomli
from hypothesis import given, strategies as st

from projmech.config import (
    apply_overrides,
    dumps_toml,
    load_problem,
    load_scenario,
    parse_problem,
    parse_scenario,
)
from projmech.errors import ConfigError, InconsistentRestitutionError

BALL = {"model": {"name": "bouncing_ball", "params": {"restitution": 0.5}}}


def _raw(**sections):
    raw = {"model": dict(BALL["model"], params=dict(BALL["model"]["params"]))}
    raw.update(sections)
    return raw


def test_defaults():
    cfg = parse_scenario(_raw())
    assert cfg.integrator.method == "rk4"
    assert cfg.integrator.step_size == 1e-3
    assert cfg.tolerances.event_tol == 1e-10
    assert cfg.tolerances.rank_tol is None
    assert cfg.outputs.sample_stride == 1
    assert not cfg.allow_inconsistent


def test_zero_duration_is_accepted():
    assert parse_scenario(_raw(integrator={"t_end": 0.0})).integrator.t_end == 0.0


@pytest.mark.parametrize(
    "section, key, value",
    [
        ("integrator", "step_size", 0.0),
        ("integrator", "step_size", -1e-3),
        ("integrator", "t_end", -1.0),
        ("integrator", "method", "euler"),
        ("integrator", "step_size", "small"),
        ("tolerances", "gap_tol", 0.0),
        ("tolerances", "event_tol", float("nan")),
        ("outputs", "sample_stride", 0),
        ("outputs", "sample_stride", 1.5),
        ("integrator", "bogus", 1.0),
    ],
)
def test_invalid_field_is_named(section, key, value):
    with pytest.raises(ConfigError) as exc:
        parse_scenario(_raw(**{section: {key: value}}))
    assert exc.value.field == f"{section}.{key}"
    assert exc.value.exit_code == 2


def test_missing_and_unknown_model():
    with pytest.raises(ConfigError) as exc:
        parse_scenario({})
    assert exc.value.field == "model"
    with pytest.raises(ConfigError) as exc:
        parse_scenario({"model": {"name": "nope"}})
    assert exc.value.field == "model.name"
    with pytest.raises(ConfigError) as exc:
        parse_scenario({"model": {"name": "bouncing_ball", "params": {"mass2": 1.0}}})
    assert exc.value.field == "model.params.mass2"


def test_restitution_above_one_refused():
    raw = _raw()
    raw["model"]["params"]["restitution"] = 1.5
    with pytest.raises(InconsistentRestitutionError) as exc:
        parse_scenario(raw)
    assert exc.value.exit_code == 4
    assert "energetic" in str(exc.value)
    raw["allow_inconsistent"] = True
    assert parse_scenario(raw).model.params["restitution"] == 1.5


def test_negative_restitution_is_a_validation_error():
    raw = _raw()
    raw["model"]["params"]["restitution"] = -0.1
    with pytest.raises(ConfigError) as exc:
        parse_scenario(raw)
    assert exc.value.field == "model.params.restitution"


def test_overrides_use_toml_literals():
    raw = apply_overrides(_raw(), ["integrator.step_size=1e-4", "integrator.method=\"dopri5\"",
                                   "model.params.restitution=0.25", "allow_inconsistent=true"])
    cfg = parse_scenario(raw)
    assert cfg.integrator.step_size == 1e-4
    assert cfg.integrator.method == "dopri5"
    assert cfg.model.params["restitution"] == 0.25
    assert cfg.allow_inconsistent


def test_bare_string_override():
    cfg = parse_scenario(apply_overrides(_raw(), ["integrator.method=dopri5"]))
    assert cfg.integrator.method == "dopri5"


@pytest.mark.parametrize("item", ["integrator.stepsize=1", "nothing", "model.params.radius=2", "foo.bar=1"])
def test_bad_override(item):
    with pytest.raises(ConfigError):
        apply_overrides(_raw(), [item])


def test_overrides_do_not_mutate_input():
    raw = _raw()
    apply_overrides(raw, ["integrator.step_size=0.5"])
    assert "integrator" not in raw


def test_load_scenario_from_file(tmp_path):
    p = tmp_path / "s.toml"
    p.write_text('[model]\nname = "two_mass"\n[integrator]\nt_end = 0.5\n')
    cfg = load_scenario(p, ["integrator.t_end=0.25"])
    assert cfg.model.name == "two_mass" and cfg.integrator.t_end == 0.25
    p.write_text("[model\n")
    with pytest.raises(ConfigError):
        load_scenario(p)
    with pytest.raises(FileNotFoundError):
        load_scenario(tmp_path / "missing.toml")


def test_scenario_round_trip():
    cfg = parse_scenario(_raw(integrator={"step_size": 1e-4, "t_end": 2.0}))
    again = parse_scenario(tomli.loads(dumps_toml(cfg.to_dict())))
    assert again == cfg


# -- problem files ----------------------------------------------------------


PROBLEM = {"M": [[1.0, 0.0], [0.0, 1.0]], "A": [[-1.0, 1.0]], "qdot_minus": [1.0, 0.0], "e": 1.0}


def test_parse_problem():
    spec = parse_problem(PROBLEM)
    assert spec.M.shape == (2, 2) and spec.A.shape == (1, 2)
    assert spec.e == 1.0 and spec.E is None


def test_problem_with_empty_jacobian():
    spec = parse_problem(dict(PROBLEM, A=[]))
    assert spec.A.shape == (0, 2)


@pytest.mark.parametrize(
    "change, field",
    [
        ({"M": [[1.0, 0.0]]}, "M"),
        ({"A": [[1.0, 0.0, 0.0]]}, "A"),
        ({"qdot_minus": [1.0]}, "qdot_minus"),
        ({"E": [[0.5]]}, "E"),
        ({"bilateral_rows": 2}, "bilateral_rows"),
        ({"extra": 1}, "extra"),
        ({"e": -1.0}, "e"),
    ],
)
def test_problem_validation(change, field):
    with pytest.raises(ConfigError) as exc:
        parse_problem(dict(PROBLEM, **change))
    assert exc.value.field == field


def test_problem_needs_restitution_only_when_asked():
    raw = {k: v for k, v in PROBLEM.items() if k != "e"}
    with pytest.raises(ConfigError):
        parse_problem(raw)
    assert parse_problem(raw, require_restitution=False).e is None


def test_problem_round_trip(tmp_path):
    spec = parse_problem(dict(PROBLEM, i_u=[0.1, -0.2], rank_tol=1e-12))
    p = tmp_path / "p.toml"
    p.write_text(dumps_toml(spec.to_dict()))
    again = load_problem(p)
    np.testing.assert_array_equal(again.M, spec.M)
    np.testing.assert_array_equal(again.i_u, spec.i_u)
    assert again.rank_tol == spec.rank_tol


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=6))
def test_writer_round_trips_floats_exactly(values):
    doc = tomli.loads(dumps_toml({"x": values, "t": {"y": values[0]}}))
    assert doc["x"] == values
    assert doc["t"]["y"] == values[0]
