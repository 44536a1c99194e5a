"""Built-in model library, keyed by name.

Every builder takes a parameter mapping (already merged with its
defaults) and returns a :class:`Model`. Coordinates are Cartesian, so the
mass matrices are constant and the bias force is pure gravity.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import ConfigError
from .model import ConstraintSet, SystemDynamics

__all__ = ["MODELS", "Model", "build_model", "duplicate_rows", "model_defaults"]


@dataclass(frozen=True)
class Model:
    name: str
    dynamics: SystemDynamics
    constraints: ConstraintSet
    q0: np.ndarray
    qd0: np.ndarray
    potential: Callable

    @property
    def n(self) -> int:
        return self.dynamics.n

    def kinetic_energy(self, q, qd) -> float:
        return 0.5 * float(qd @ self.dynamics.mass_matrix(q) @ qd)

    def energy(self, q, qd) -> float:
        return self.kinetic_energy(q, qd) + float(self.potential(q))


def _restitution(params, m_u, where):
    e = params.get("restitution")
    E = params.get("restitution_matrix")
    if E is not None:
        E = np.asarray(E, dtype=float).reshape(-1)
        if E.shape != (m_u,):
            raise ConfigError(f"{where}.restitution_matrix", f"needs {m_u} diagonal entries, got {E.size}")
        if np.any(E < 0) or not np.all(np.isfinite(E)):
            raise ConfigError(f"{where}.restitution_matrix", "entries must be finite and nonnegative")
        return E
    return float(e)


def _constant_mass(diag):
    M = np.diag(np.asarray(diag, dtype=float))
    return lambda q: M


def _gravity_bias(weights):
    """Bias ``h = dV/dq`` for a uniform gravity field; ``weights`` are m*g per coordinate."""
    w = np.asarray(weights, dtype=float)
    return lambda q, qd: w


def _bouncing_ball(p):
    m, g = float(p["mass"]), float(p["gravity"])
    F, t_on = float(p["lift_force"]), float(p["lift_time"])

    def u(t, q, qd):
        return np.array([F if t >= t_on else 0.0])

    sd = SystemDynamics(1, _constant_mass([m]), _gravity_bias([m * g]), u if F != 0.0 else None, constant_mass=True)
    J = np.array([[1.0]])
    cs = ConstraintSet(
        n=1, m_u=1,
        phi_u=lambda q: np.array([q[0]]),
        jac_u=lambda q: J,
        restitution=_restitution(p, 1, "model.params"),
        linear=True,
    )
    return sd, cs, [p["height"]], [p["velocity"]], lambda q: m * g * q[0]


def _two_mass(p):
    m1, m2, d = float(p["m1"]), float(p["m2"]), float(p["distance"])
    sd = SystemDynamics(2, _constant_mass([m1, m2]), _gravity_bias([0.0, 0.0]), constant_mass=True)
    J = np.array([[-1.0, 1.0]])
    cs = ConstraintSet(
        n=2, m_u=1,
        phi_u=lambda q: np.array([q[1] - q[0] - d]),
        jac_u=lambda q: J,
        restitution=_restitution(p, 1, "model.params"),
        linear=True,
    )
    return sd, cs, p["q0"], p["qd0"], lambda q: 0.0


def _pendulum(p):
    """Point mass on a rigid rod hinged at the origin, optional floor at ``y = floor``."""
    m, L, g = float(p["mass"]), float(p["length"]), float(p["gravity"])
    floor = p["floor"]
    th, om = float(p["angle"]), float(p["angular_velocity"])
    # angle measured from the downward vertical, counter-clockwise
    q0 = [L * np.sin(th), -L * np.cos(th)]
    qd0 = [L * om * np.cos(th), L * om * np.sin(th)]
    sd = SystemDynamics(2, _constant_mass([m, m]), _gravity_bias([0.0, m * g]), constant_mass=True)
    kw = dict(
        n=2, m_b=1,
        phi_b=lambda q: np.array([0.5 * (q[0] ** 2 + q[1] ** 2 - L * L)]),
        jac_b=lambda q: np.array([[q[0], q[1]]]),
        jac_rate_b=lambda q, qd: np.array([[qd[0], qd[1]]]),
    )
    if floor is not None:
        y0 = float(floor)
        Ju = np.array([[0.0, 1.0]])
        kw.update(
            m_u=1,
            phi_u=lambda q: np.array([q[1] - y0]),
            jac_u=lambda q: Ju,
            jac_rate_u=lambda q, qd: np.zeros((1, 2)),
            restitution=_restitution(p, 1, "model.params"),
        )
    return sd, ConstraintSet(**kw), q0, qd0, lambda q: m * g * q[1]


def _cradle(p):
    """Balls of diameter ``diameter`` on a line with optional end walls."""
    masses = np.asarray(p["masses"], dtype=float)
    N = masses.size
    d = float(p["diameter"])
    left, right = p["left_wall"], p["right_wall"]
    rows = []  # (coefficient row, offset): phi = row . q - offset
    for i in range(N - 1):
        r = np.zeros(N)
        r[i], r[i + 1] = -1.0, 1.0
        rows.append((r, d))
    if left is not None:
        r = np.zeros(N)
        r[0] = 1.0
        rows.append((r, float(left) + 0.5 * d))
    if right is not None:
        r = np.zeros(N)
        r[-1] = -1.0
        rows.append((r, -(float(right) - 0.5 * d)))
    J = np.array([r for r, _ in rows]).reshape(len(rows), N)
    off = np.array([o for _, o in rows])
    sd = SystemDynamics(N, _constant_mass(masses), _gravity_bias(np.zeros(N)), constant_mass=True)
    cs = ConstraintSet(
        n=N, m_u=len(rows),
        phi_u=lambda q: J @ q - off,
        jac_u=lambda q: J,
        restitution=_restitution(p, len(rows), "model.params"),
        linear=True,
    )
    return sd, cs, p["q0"], p["qd0"], lambda q: 0.0


def _circle(p):
    m, R, g = float(p["mass"]), float(p["radius"]), float(p["gravity"])
    th, om = float(p["angle"]), float(p["angular_velocity"])
    q0 = [R * np.cos(th), R * np.sin(th)]
    qd0 = [-R * om * np.sin(th), R * om * np.cos(th)]
    sd = SystemDynamics(2, _constant_mass([m, m]), _gravity_bias([0.0, m * g]), constant_mass=True)
    cs = ConstraintSet(
        n=2, m_b=1,
        phi_b=lambda q: np.array([0.5 * (q[0] ** 2 + q[1] ** 2 - R * R)]),
        jac_b=lambda q: np.array([[q[0], q[1]]]),
        jac_rate_b=lambda q, qd: np.array([[qd[0], qd[1]]]),
    )
    return sd, cs, q0, qd0, lambda q: m * g * q[1]


_COMMON = {"duplicate_rows": False, "restitution": 0.5, "restitution_matrix": None}

MODELS = {
    "bouncing_ball": (
        _bouncing_ball,
        {"mass": 1.0, "gravity": 10.0, "height": 1.0, "velocity": 0.0,
         "lift_force": 0.0, "lift_time": 0.0},
    ),
    "two_mass": (
        _two_mass,
        {"m1": 1.0, "m2": 1.0, "distance": 0.0, "q0": [0.0, 1.0], "qd0": [1.0, 0.0]},
    ),
    "pendulum": (
        _pendulum,
        {"mass": 1.0, "length": 1.0, "gravity": 9.81, "floor": None,
         "angle": 1.0, "angular_velocity": 0.0},
    ),
    "cradle": (
        _cradle,
        {"masses": [1.0, 1.0], "diameter": 0.0, "left_wall": None, "right_wall": 2.0,
         "q0": [0.0, 1.0], "qd0": [2.0, 1.0]},
    ),
    "particle_on_circle": (
        _circle,
        {"mass": 1.0, "radius": 1.0, "gravity": 0.0, "angle": 0.0, "angular_velocity": 1.0},
    ),
}


def model_defaults(name: str) -> dict:
    if name not in MODELS:
        raise ConfigError("model.name", f"unknown model {name!r}; choose from {sorted(MODELS)}")
    return {**_COMMON, **MODELS[name][1]}


def duplicate_rows(cs: ConstraintSet) -> ConstraintSet:
    """Repeat every constraint row once, producing a rank deficient Jacobian.

    The constrained motion is unchanged; only the multiplier split is not.
    """
    def stack_vec(fn, m):
        return lambda q: np.tile(np.asarray(fn(q), dtype=float).reshape(m), 2)

    def stack_mat(fn, m, n):
        if fn is None:
            return None
        return lambda *a: np.vstack([np.asarray(fn(*a), dtype=float).reshape(m, n)] * 2)

    n, mb, mu = cs.n, cs.m_b, cs.m_u
    e = cs.restitution
    if isinstance(e, np.ndarray):
        e = np.tile(e, 2)
    return replace(
        cs,
        m_b=2 * mb,
        m_u=2 * mu,
        phi_b=stack_vec(cs.phi_b, mb),
        phi_u=stack_vec(cs.phi_u, mu),
        jac_b=stack_mat(cs.jac_b, mb, n),
        jac_u=stack_mat(cs.jac_u, mu, n),
        jac_rate_b=stack_mat(cs.jac_rate_b, mb, n),
        jac_rate_u=stack_mat(cs.jac_rate_u, mu, n),
        gamma=np.tile(cs.gamma, 2),
        gamma_star=np.tile(cs.gamma_star, 2),
        restitution=e,
    )


def build_model(name: str, params: dict | None = None) -> Model:
    """Instantiate a built-in model; unknown parameters are rejected."""
    defaults = model_defaults(name)
    params = dict(params or {})
    for key in params:
        if key not in defaults:
            raise ConfigError(f"model.params.{key}", f"unknown parameter for model {name!r}")
    p = {**defaults, **params}
    builder = MODELS[name][0]
    sd, cs, q0, qd0, V = builder(p)
    q0 = np.asarray(q0, dtype=float).reshape(-1)
    qd0 = np.asarray(qd0, dtype=float).reshape(-1)
    if q0.shape != (sd.n,) or qd0.shape != (sd.n,):
        raise ConfigError("model.params", f"initial state must have {sd.n} coordinates")
    if p["duplicate_rows"]:
        cs = duplicate_rows(cs)
    return Model(name=name, dynamics=sd, constraints=cs, q0=q0, qd0=qd0, potential=V)
