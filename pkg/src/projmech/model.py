"""Constrained system assembly: Jacobians, activation logic, accelerations and forces."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import InvalidModelError
from .projection import ProjectionBundle, build_bundle

__all__ = [
    "AssembledJacobian",
    "ConstraintSet",
    "GeneralizedState",
    "SystemDynamics",
    "assemble_jacobian",
    "constrained_acceleration",
    "constraint_force",
    "multiplier_slots",
    "unilateral_accelerations",
    "unilateral_rates",
    "update_activation",
]

# default activation tolerances, all in model units
ACT_TOL = 1e-9
VEL_TOL = 1e-9
LAMBDA_TOL = 1e-9

_FD_STEP = np.cbrt(np.finfo(float).eps)


def _empty_phi(q):
    return np.zeros(0)


@dataclass(frozen=True)
class ConstraintSet:
    """Bilateral and unilateral constraints plus their switching state.

    ``gamma`` marks the unilateral rows currently enforced and
    ``gamma_star`` the rows closing with negative rate that take part in
    an impact. ``restitution`` is either one global coefficient or one
    coefficient per unilateral row (the diagonal of the restitution matrix).
    """

    n: int
    phi_b: Callable = _empty_phi
    jac_b: Callable | None = None
    phi_u: Callable = _empty_phi
    jac_u: Callable | None = None
    jac_rate_b: Callable | None = None
    jac_rate_u: Callable | None = None
    m_b: int = 0
    m_u: int = 0
    gamma: np.ndarray = None
    gamma_star: np.ndarray = None
    restitution: float | np.ndarray = 0.0
    # Jacobians independent of q (so Adot = 0 and bundles may be cached)
    linear: bool = False

    def __post_init__(self):
        for name in ("gamma", "gamma_star"):
            v = getattr(self, name)
            v = np.zeros(self.m_u, dtype=bool) if v is None else np.array(v, dtype=bool)
            if v.shape != (self.m_u,):
                raise InvalidModelError(f"{name} must have length m_u={self.m_u}")
            object.__setattr__(self, name, v)

    def with_activation(self, gamma=None, gamma_star=None) -> ConstraintSet:
        return replace(
            self,
            gamma=self.gamma if gamma is None else gamma,
            gamma_star=self.gamma_star if gamma_star is None else gamma_star,
        )

    def bilateral_jacobian(self, q) -> np.ndarray:
        if self.m_b == 0:
            return np.zeros((0, self.n))
        return np.asarray(self.jac_b(q), dtype=float).reshape(self.m_b, self.n)

    def unilateral_jacobian(self, q) -> np.ndarray:
        if self.m_u == 0:
            return np.zeros((0, self.n))
        return np.asarray(self.jac_u(q), dtype=float).reshape(self.m_u, self.n)

    def gaps(self, q) -> np.ndarray:
        if self.m_u == 0:
            return np.zeros(0)
        return np.asarray(self.phi_u(q), dtype=float).reshape(self.m_u)

    def bilateral_residual(self, q) -> np.ndarray:
        if self.m_b == 0:
            return np.zeros(0)
        return np.asarray(self.phi_b(q), dtype=float).reshape(self.m_b)


@dataclass(frozen=True)
class SystemDynamics:
    """``M(q) qdd + h(q, qd) = u(t, q, qd) + f``."""

    n: int
    mass: Callable
    bias: Callable
    input: Callable | None = None
    constant_mass: bool = False

    def mass_matrix(self, q) -> np.ndarray:
        M = np.asarray(self.mass(q), dtype=float).reshape(self.n, self.n)
        return M

    def bias_force(self, q, qdot) -> np.ndarray:
        return np.asarray(self.bias(q, qdot), dtype=float).reshape(self.n)

    def input_force(self, t, q, qdot) -> np.ndarray:
        if self.input is None:
            return np.zeros(self.n)
        return np.asarray(self.input(t, q, qdot), dtype=float).reshape(self.n)


@dataclass(frozen=True)
class GeneralizedState:
    t: float
    q: np.ndarray
    qdot: np.ndarray
    active_set: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


@dataclass(frozen=True)
class AssembledJacobian:
    """Stacked active Jacobian with bookkeeping to map rows back to constraints.

    Rows are ordered: all bilateral rows, then the selected unilateral rows
    in increasing index order (``unilateral_rows``).
    """

    A: np.ndarray
    Adot: np.ndarray | None
    n_bilateral: int
    unilateral_rows: np.ndarray

    @property
    def m(self) -> int:
        return self.A.shape[0]


def _directional_rate(jac, q, qdot, shape):
    """Central-difference derivative of ``jac(q)`` along ``qdot``."""
    speed = float(np.linalg.norm(qdot))
    if speed == 0.0:
        return np.zeros(shape)
    h = _FD_STEP * (1.0 + float(np.linalg.norm(q)))
    d = qdot / speed
    Jp = np.asarray(jac(q + h * d), dtype=float).reshape(shape)
    Jm = np.asarray(jac(q - h * d), dtype=float).reshape(shape)
    return speed * (Jp - Jm) / (2.0 * h)


def assemble_jacobian(cs: ConstraintSet, q, include_impacting=False, qdot=None) -> AssembledJacobian:
    """Stack bilateral rows and the selected unilateral rows.

    Unilateral rows enter when ``gamma`` is set, or when ``gamma_star`` is
    set and ``include_impacting`` is true. Inactive rows are omitted rather
    than zeroed. With ``qdot`` given, the Jacobian rate is assembled too,
    analytically when the constraint set provides it and otherwise by a
    central difference along ``qdot``.
    """
    q = np.asarray(q, dtype=float)
    sel = cs.gamma | cs.gamma_star if include_impacting else cs.gamma.copy()
    rows = np.flatnonzero(sel)
    Ab = cs.bilateral_jacobian(q)
    Au = cs.unilateral_jacobian(q)[rows] if rows.size else np.zeros((0, cs.n))
    A = np.vstack([Ab, Au])

    Adot = None
    if qdot is not None:
        qdot = np.asarray(qdot, dtype=float)
        if cs.linear:
            Adot = np.zeros_like(A)
        else:
            parts = []
            if cs.m_b:
                if cs.jac_rate_b is not None:
                    parts.append(np.asarray(cs.jac_rate_b(q, qdot), dtype=float).reshape(cs.m_b, cs.n))
                else:
                    parts.append(_directional_rate(cs.jac_b, q, qdot, (cs.m_b, cs.n)))
            if rows.size:
                if cs.jac_rate_u is not None:
                    Jd = np.asarray(cs.jac_rate_u(q, qdot), dtype=float).reshape(cs.m_u, cs.n)
                else:
                    Jd = _directional_rate(cs.jac_u, q, qdot, (cs.m_u, cs.n))
                parts.append(Jd[rows])
            Adot = np.vstack(parts) if parts else np.zeros((0, cs.n))
    return AssembledJacobian(A=A, Adot=Adot, n_bilateral=cs.m_b, unilateral_rows=rows)


def unilateral_rates(cs: ConstraintSet, q, qdot) -> np.ndarray:
    """Gap rates ``d(phi_u)/dt = J_u qdot`` for every unilateral row."""
    if cs.m_u == 0:
        return np.zeros(0)
    return cs.unilateral_jacobian(q) @ np.asarray(qdot, dtype=float)


def unilateral_accelerations(cs: ConstraintSet, q, qdot, qddot) -> np.ndarray:
    """Gap accelerations ``J_u qdd + Jdot_u qd`` for every unilateral row."""
    if cs.m_u == 0:
        return np.zeros(0)
    qdot = np.asarray(qdot, dtype=float)
    acc = cs.unilateral_jacobian(q) @ np.asarray(qddot, dtype=float)
    if cs.linear:
        return acc
    if cs.jac_rate_u is not None:
        Jd = np.asarray(cs.jac_rate_u(q, qdot), dtype=float).reshape(cs.m_u, cs.n)
    else:
        Jd = _directional_rate(cs.jac_u, np.asarray(q, dtype=float), qdot, (cs.m_u, cs.n))
    return acc + Jd @ qdot


def update_activation(
    cs: ConstraintSet,
    q,
    qdot,
    lambda_u,
    act_tol=ACT_TOL,
    vel_tol=VEL_TOL,
    lambda_tol=LAMBDA_TOL,
) -> ConstraintSet:
    """Recompute the switching state of the unilateral rows.

    Active rows stay active unless their multiplier dropped below
    ``-lambda_tol``. An inactive row at a closed gap (``phi <= act_tol``)
    becomes an impact row when approaching faster than ``vel_tol``, becomes
    active when its rate is within ``vel_tol`` of zero, and stays inactive
    when separating.
    """
    if cs.m_u == 0:
        return cs
    lambda_u = np.asarray(lambda_u, dtype=float).reshape(cs.m_u)
    phi = cs.gaps(q)
    rate = unilateral_rates(cs, q, qdot)

    gamma = cs.gamma.copy()
    released = gamma & (lambda_u < -lambda_tol)
    gamma[released] = False

    closed = (~cs.gamma) & (phi <= act_tol)
    gamma_star = closed & (rate < -vel_tol)
    resting = closed & (np.abs(rate) <= vel_tol) & (lambda_u >= -lambda_tol)
    gamma[resting] = True
    return cs.with_activation(gamma=gamma, gamma_star=gamma_star)


def _free_acceleration(M, rhs):
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise InvalidModelError("mass matrix is not positive definite") from None
    y = np.linalg.solve(L, rhs)
    return np.linalg.solve(L.T, y)


def constrained_acceleration(sd: SystemDynamics, bundle: ProjectionBundle, state: GeneralizedState, u=None):
    """Constrained and unconstrained accelerations.

    Returns ``(qdd, qdd_free)`` with ``qdd = Mc^-1 P (u - h) + S Omega qd``
    and ``qdd_free = M^-1 (u - h)``; the two are related by
    ``qdd = (I - S) qdd_free + S Omega qd``.
    """
    q, qd = state.q, state.qdot
    if u is None:
        u = sd.input_force(state.t, q, qd)
    rhs = np.asarray(u, dtype=float) - sd.bias_force(q, qd)
    qdd_free = _free_acceleration(sd.mass_matrix(q), rhs)
    qdd = bundle.Mo_pinv @ rhs + bundle.S @ (bundle.Omega @ qd)
    return qdd, qdd_free


def constraint_force(sd: SystemDynamics, bundle: ProjectionBundle, state: GeneralizedState, u=None):
    """Generalized constraint force and minimum-norm multipliers.

    ``f = S^T (h - u) + S^T M Omega qd``; ``lam = A^{+T} f`` is aligned with
    the rows of ``bundle.A`` (use :func:`multiplier_slots` to scatter it).
    """
    q, qd = state.q, state.qdot
    if u is None:
        u = sd.input_force(state.t, q, qd)
    M = sd.mass_matrix(q)
    St = bundle.S.T
    f = St @ (sd.bias_force(q, qd) - np.asarray(u, dtype=float)) + St @ (M @ (bundle.Omega @ qd))
    lam = bundle.A_pinv.T @ f
    return f, lam


def multiplier_slots(jac: AssembledJacobian, lam, m_u: int):
    """Scatter row-aligned multipliers into ``(lambda_b, lambda_u)``.

    ``lambda_u`` has one slot per unilateral constraint; rows absent from
    the Jacobian get exactly zero.
    """
    lam = np.asarray(lam, dtype=float)
    lambda_b = lam[: jac.n_bilateral].copy()
    lambda_u = np.zeros(m_u)
    lambda_u[jac.unilateral_rows] = lam[jac.n_bilateral:]
    return lambda_b, lambda_u


def active_bundle(sd: SystemDynamics, cs: ConstraintSet, state: GeneralizedState, rank_tol=None, include_impacting=False):
    """Convenience: assemble the active Jacobian and its projection bundle."""
    jac = assemble_jacobian(cs, state.q, include_impacting=include_impacting, qdot=state.qdot)
    bundle = build_bundle(sd.mass_matrix(state.q), jac.A, jac.Adot, rank_tol=rank_tol)
    return jac, bundle
