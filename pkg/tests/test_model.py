from __future__ import annotations

import numpy as np
import pytest

from projmech.errors import ConfigError, InvalidModelError
from projmech.model import (
    ConstraintSet,
    GeneralizedState,
    SystemDynamics,
    active_bundle,
    assemble_jacobian,
    constrained_acceleration,
    constraint_force,
    multiplier_slots,
    unilateral_accelerations,
    update_activation,
)
from projmech.models import MODELS, build_model, duplicate_rows, model_defaults
from projmech.projection import build_bundle


def _floor_particle(m=2.0, g=9.81):
    sd = SystemDynamics(2, lambda q: m * np.eye(2), lambda q, qd: np.array([0.0, m * g]), constant_mass=True)
    cs = ConstraintSet(
        n=2, m_u=1,
        phi_u=lambda q: np.array([q[1]]),
        jac_u=lambda q: np.array([[0.0, 1.0]]),
        gamma=[True],
        linear=True,
    )
    return sd, cs


def _unit_circle():
    sd = SystemDynamics(2, lambda q: np.eye(2), lambda q, qd: np.zeros(2), constant_mass=True)
    cs = ConstraintSet(
        n=2, m_b=1,
        phi_b=lambda q: np.array([0.5 * (q @ q - 1.0)]),
        jac_b=lambda q: np.array([[q[0], q[1]]]),
    )
    return sd, cs


# -- Jacobian assembly ------------------------------------------------------


def test_empty_jacobian_without_constraints():
    cs = ConstraintSet(n=3)
    jac = assemble_jacobian(cs, np.zeros(3))
    assert jac.A.shape == (0, 3) and jac.m == 0


def test_impacting_rows_enter_only_on_request():
    m = build_model("two_mass")
    cs = m.constraints.with_activation(gamma_star=[True])
    assert assemble_jacobian(cs, m.q0).m == 0
    jac = assemble_jacobian(cs, m.q0, include_impacting=True)
    np.testing.assert_array_equal(jac.A, [[-1.0, 1.0]])
    np.testing.assert_array_equal(jac.unilateral_rows, [0])


def test_inactive_floor_row_is_omitted():
    m = build_model("pendulum", {"floor": -2.0})
    jac = assemble_jacobian(m.constraints, m.q0)
    assert jac.m == 1 and jac.n_bilateral == 1
    np.testing.assert_allclose(jac.A, [m.q0])


def test_jacobian_rate_finite_difference_matches_analytic():
    th = 0.3
    q = np.array([np.cos(th), np.sin(th)])
    qd = np.array([-np.sin(th), np.cos(th)]) * 2.0
    _, cs = _unit_circle()
    jac = assemble_jacobian(cs, q, qdot=qd)
    np.testing.assert_allclose(jac.Adot, [qd], atol=1e-9)


def test_linear_constraints_have_zero_rate():
    m = build_model("cradle")
    cs = m.constraints.with_activation(gamma=[True, True])
    jac = assemble_jacobian(cs, m.q0, qdot=m.qd0)
    assert np.all(jac.Adot == 0)


def test_gamma_length_is_checked():
    with pytest.raises(InvalidModelError):
        ConstraintSet(n=1, m_u=2, gamma=[True])


# -- activation -------------------------------------------------------------


def _ball_cs(gamma=False):
    return build_model("bouncing_ball").constraints.with_activation(gamma=[gamma])


def test_open_gap_stays_inactive():
    cs = update_activation(_ball_cs(), np.array([0.5]), np.array([-3.0]), np.zeros(1))
    assert not cs.gamma[0] and not cs.gamma_star[0]


def test_closing_gap_marks_impact():
    cs = update_activation(_ball_cs(), np.array([0.0]), np.array([-2.0]), np.zeros(1))
    assert cs.gamma_star[0] and not cs.gamma[0]


def test_negative_multiplier_releases_contact():
    cs = update_activation(_ball_cs(True), np.array([0.0]), np.array([0.0]), np.array([-0.3]))
    assert not cs.gamma[0]


def test_resting_gap_with_compressive_force_activates():
    cs = update_activation(_ball_cs(), np.array([0.0]), np.array([0.0]), np.array([1.0]))
    assert cs.gamma[0] and not cs.gamma_star[0]


def test_separating_gap_does_not_activate():
    cs = update_activation(_ball_cs(), np.array([0.0]), np.array([1.0]), np.zeros(1))
    assert not cs.gamma[0] and not cs.gamma_star[0]


# -- accelerations and forces -----------------------------------------------


def test_unconstrained_acceleration_is_free():
    sd = SystemDynamics(2, lambda q: np.diag([2.0, 4.0]), lambda q, qd: np.array([1.0, 0.0]))
    st = GeneralizedState(0.0, np.zeros(2), np.zeros(2))
    b = build_bundle(sd.mass_matrix(st.q), np.zeros((0, 2)))
    u = np.array([3.0, 8.0])
    qdd, free = constrained_acceleration(sd, b, st, u)
    np.testing.assert_allclose(free, [1.0, 2.0])
    np.testing.assert_allclose(qdd, free, atol=1e-14)
    f, lam = constraint_force(sd, b, st, u)
    np.testing.assert_allclose(f, 0.0, atol=1e-14)
    assert lam.shape == (0,)


def test_resting_particle_is_supported():
    m, g = 2.0, 9.81
    sd, cs = _floor_particle(m, g)
    st = GeneralizedState(0.0, np.array([0.3, 0.0]), np.zeros(2), cs.gamma)
    jac, b = active_bundle(sd, cs, st)
    qdd, free = constrained_acceleration(sd, b, st)
    np.testing.assert_allclose(qdd, 0.0, atol=1e-12)
    np.testing.assert_allclose(free, [0.0, -g])
    f, lam = constraint_force(sd, b, st)
    np.testing.assert_allclose(f, [0.0, m * g], atol=1e-12)
    lb, lu = multiplier_slots(jac, lam, cs.m_u)
    assert lb.shape == (0,)
    np.testing.assert_allclose(lu, [m * g], atol=1e-12)


def test_circle_particle_centripetal():
    w = 1.3
    sd, cs = _unit_circle()
    st = GeneralizedState(0.0, np.array([1.0, 0.0]), np.array([0.0, w]))
    jac, b = active_bundle(sd, cs, st)
    qdd, _ = constrained_acceleration(sd, b, st)
    np.testing.assert_allclose(qdd, [-w * w, 0.0], atol=1e-9)
    f, lam = constraint_force(sd, b, st)
    np.testing.assert_allclose(f, [-w * w, 0.0], atol=1e-9)
    np.testing.assert_allclose(lam, [-w * w], atol=1e-9)


def test_acceleration_relation_to_free_acceleration(rng):
    m = build_model("pendulum", {"angle": 0.7, "angular_velocity": 1.1})
    sd, cs = m.dynamics, m.constraints
    st = GeneralizedState(0.0, m.q0, m.qd0)
    jac, b = active_bundle(sd, cs, st)
    qdd, free = constrained_acceleration(sd, b, st)
    n = sd.n
    np.testing.assert_allclose(qdd, (np.eye(n) - b.S) @ free + b.S @ (b.Omega @ st.qdot), atol=1e-12)
    np.testing.assert_allclose(jac.A @ qdd + jac.Adot @ st.qdot, 0.0, atol=1e-8)


def test_non_spd_mass_is_invalid_model():
    sd = SystemDynamics(1, lambda q: np.array([[1.0]]), lambda q, qd: np.zeros(1))
    bad = SystemDynamics(1, lambda q: np.array([[-1.0]]), lambda q, qd: np.zeros(1))
    b = build_bundle(sd.mass_matrix(None), np.zeros((0, 1)))
    with pytest.raises(InvalidModelError):
        constrained_acceleration(bad, b, GeneralizedState(0.0, np.zeros(1), np.zeros(1)))


def _random_states(name, rng, k=5):
    m = build_model(name)
    for _ in range(k):
        q = m.q0 + 0.1 * rng.standard_normal(m.n)
        qd = rng.standard_normal(m.n)
        gamma = rng.uniform(size=m.constraints.m_u) < 0.6
        yield m, m.constraints.with_activation(gamma=gamma), q, qd


@pytest.mark.parametrize("name", sorted(MODELS))
def test_newton_euler_residual_and_ideal_work(name, rng):
    for m, cs, q, qd in _random_states(name, rng):
        sd = m.dynamics
        jac0 = assemble_jacobian(cs, q)
        qd = build_bundle(sd.mass_matrix(q), jac0.A).P @ qd  # admissible velocity
        st = GeneralizedState(0.0, q, qd, cs.gamma)
        jac, b = active_bundle(sd, cs, st)
        u = sd.input_force(0.0, q, qd)
        h = sd.bias_force(q, qd)
        qdd, _ = constrained_acceleration(sd, b, st, u)
        f, lam = constraint_force(sd, b, st, u)
        M = sd.mass_matrix(q)
        assert np.linalg.norm(M @ qdd + h - u - f) <= 1e-9 * (np.linalg.norm(u) + np.linalg.norm(h) + 1)
        assert abs(f @ qd) <= 1e-9 * (np.linalg.norm(f) * np.linalg.norm(qd) + 1)
        if jac.m:
            np.testing.assert_allclose(jac.A @ qdd + jac.Adot @ qd, 0.0, atol=1e-8)
            # f lies in range(A^T)
            np.testing.assert_allclose(b.P @ f, 0.0, atol=1e-9 * (np.linalg.norm(f) + 1))
        _, lu = multiplier_slots(jac, lam, cs.m_u)
        assert np.all(lu[~cs.gamma] == 0.0)


@pytest.mark.parametrize("name", sorted(MODELS))
def test_duplicated_rows_leave_dynamics_unchanged(name, rng):
    for m, cs, q, qd in _random_states(name, rng, k=3):
        sd = m.dynamics
        cs2 = duplicate_rows(cs)
        st1 = GeneralizedState(0.0, q, qd, cs.gamma)
        st2 = GeneralizedState(0.0, q, qd, cs2.gamma)
        _, b1 = active_bundle(sd, cs, st1)
        _, b2 = active_bundle(sd, cs2, st2)
        qdd1, _ = constrained_acceleration(sd, b1, st1)
        qdd2, _ = constrained_acceleration(sd, b2, st2)
        np.testing.assert_allclose(qdd2, qdd1, atol=1e-8)
        np.testing.assert_allclose(constraint_force(sd, b2, st2)[0], constraint_force(sd, b1, st1)[0], atol=1e-8)


def test_gap_acceleration_of_pendulum_floor():
    m = build_model("pendulum", {"floor": -2.0, "angle": 0.5, "angular_velocity": 1.0})
    cs = m.constraints
    qdd = np.array([0.3, -0.4])
    np.testing.assert_allclose(unilateral_accelerations(cs, m.q0, m.qd0, qdd), [-0.4])


# -- model library ----------------------------------------------------------


def test_unknown_model_and_parameter():
    with pytest.raises(ConfigError) as exc:
        model_defaults("double_pendulum")
    assert exc.value.field == "model.name"
    with pytest.raises(ConfigError) as exc:
        build_model("bouncing_ball", {"radius": 1.0})
    assert exc.value.field == "model.params.radius"


def test_restitution_matrix_length_checked():
    with pytest.raises(ConfigError):
        build_model("cradle", {"restitution_matrix": [0.5]})


@pytest.mark.parametrize("name", sorted(MODELS))
def test_models_start_admissible(name):
    m = build_model(name)
    assert np.all(m.constraints.gaps(m.q0) >= 0)
    np.testing.assert_allclose(m.constraints.bilateral_residual(m.q0), 0.0, atol=1e-14)
