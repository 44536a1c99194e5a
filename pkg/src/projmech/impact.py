"""Simultaneous multiple-impact resolution by oblique projection.

A global restitution coefficient ``e`` maps pre- to post-impact velocity by

    qd+ = qd- - (1 + e) S qd- + Mo^+ i_u  =  (e R + (1 - e)(I - S)) qd-   (i_u = 0)

and a restitution matrix ``E`` (one coefficient per impact-Jacobian row)
through its coordinate-space image ``Et = A^+ E A``:

    qd+ = qd- - S (Et + I) qd- + Mo^+ i_u.

Energetic consistency of ``E`` is certified by ``E^T Q E - Q <= 0`` with
``Q = G^T M G`` and ``G = S A^+``, cross-checked through the equivalent
block matrix inequality obtained from a Schur complement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InconsistentRestitutionError, InternalConsistencyError, InvalidInputError
from .projection import ProjectionBundle

__all__ = [
    "ConsistencyReport",
    "ImpactProblem",
    "ImpactRecord",
    "check_consistency",
    "energy_audit",
    "feasibility_tolerance",
    "generalized_impulse",
    "resolve_impact",
    "resolve_impact_global",
    "resolve_impact_matrix",
    "transformed_restitution",
]

# relative tolerance of the runtime self-checks (balance, restitution law, energy)
CHECK_RTOL = 1e-8


@dataclass
class ImpactProblem:
    """Inputs of one impact: inertia, impact-Jacobian bundle, pre-impact velocity.

    Exactly one of ``e_global`` and ``E`` must be given. ``E`` is aligned
    with the rows of ``bundle.A``; the first ``n_bilateral`` rows are
    bilateral constraints and must carry zero restitution.
    """

    M: np.ndarray
    bundle: ProjectionBundle
    qdot_minus: np.ndarray
    e_global: float | None = None
    E: np.ndarray | None = None
    i_u: np.ndarray | None = None
    n_bilateral: int = 0
    participating: tuple = ()

    def __post_init__(self):
        self.M = np.asarray(self.M, dtype=float)
        self.qdot_minus = np.asarray(self.qdot_minus, dtype=float).reshape(-1)
        n = self.bundle.n
        if self.M.shape != (n, n) or self.qdot_minus.shape != (n,):
            raise InvalidInputError("M, bundle and qdot_minus dimensions disagree")
        if self.i_u is None:
            self.i_u = np.zeros(n)
        else:
            self.i_u = np.asarray(self.i_u, dtype=float).reshape(-1)
            if self.i_u.shape != (n,):
                raise InvalidInputError(f"i_u must have length {n}")
        if (self.e_global is None) == (self.E is None):
            raise InvalidInputError("give exactly one of e_global and E")
        if self.E is not None:
            self.E = np.asarray(self.E, dtype=float)
            m = self.bundle.m
            if self.E.shape != (m, m):
                raise InvalidInputError(f"E must be {m}x{m} to match the impact Jacobian, got {self.E.shape}")
            if not np.all(np.isfinite(self.E)):
                raise InvalidInputError("E has non-finite entries")
        if not (0 <= self.n_bilateral <= self.bundle.m):
            raise InvalidInputError("n_bilateral exceeds the number of impact rows")

    @property
    def has_external_impulse(self) -> bool:
        return bool(np.any(self.i_u != 0.0))


@dataclass
class ConsistencyReport:
    """Verdict of the energetic-consistency certificate."""

    feasible: bool
    Q: np.ndarray
    worst_eigenvalue: float
    lmi_min_eigenvalue: float
    tol: float


@dataclass
class ImpactRecord:
    qdot_minus: np.ndarray
    qdot_plus: np.ndarray
    i_f: np.ndarray
    i_lambda: np.ndarray
    p_minus: np.ndarray
    p_plus: np.ndarray
    K_minus: float
    K_plus: float
    W_loss: float
    gamma: float
    qdot_bar: np.ndarray
    participating: tuple = ()
    # minimum-norm multipliers are not unique when the impact rows are dependent
    nonunique_multipliers: bool = False
    consistency: ConsistencyReport | None = None
    notes: list = field(default_factory=list)


def _kinetic(M, v) -> float:
    return 0.5 * float(v @ M @ v)


def _gamma_ratio(K_minus, W_loss) -> float:
    if K_minus <= 0.0:
        return 1.0
    return 1.0 + W_loss / K_minus


def transformed_restitution(bundle: ProjectionBundle, E) -> np.ndarray:
    """``Et = A^+ E A``, the restitution matrix in coordinate space."""
    return bundle.A_pinv @ np.asarray(E, dtype=float) @ bundle.A


def _assert_close(lhs, rhs, scale, what):
    err = float(np.max(np.abs(np.asarray(lhs) - np.asarray(rhs)), initial=0.0))
    if err > CHECK_RTOL * max(scale, 1e-300) + 1e-300:
        raise InternalConsistencyError(f"{what}: residual {err:.3e} exceeds {CHECK_RTOL:g} x {scale:.3e}")


def _restitution_residual(bundle, qdot_plus, target_rate):
    """Residual of ``A qd+ = target`` restricted to range(A)."""
    A = bundle.A
    if A.shape[0] == 0:
        return np.zeros(0)
    r = A @ qdot_plus - target_rate
    return A @ (bundle.A_pinv @ r)


def generalized_impulse(prob: ImpactProblem, qdot_plus):
    """Generalized impulse ``i_f`` and minimum-norm multipliers ``i_lambda``.

    ``i_f = -(e + 1) S^T p-  - S^T i_u`` for a global coefficient and
    ``i_f = -M S (Et + I) qd-  - S^T i_u`` for a restitution matrix. The
    impulse-momentum balance ``M (qd+ - qd-) = i_u + i_f`` is checked
    against the supplied post-impact velocity.
    """
    b = prob.bundle
    M, qm, iu = prob.M, prob.qdot_minus, prob.i_u
    St = b.S.T
    if prob.E is None:
        i_f = -(prob.e_global + 1.0) * (St @ (M @ qm)) - St @ iu
    else:
        Et = transformed_restitution(b, prob.E)
        i_f = -M @ (b.S @ (Et @ qm + qm)) - St @ iu
    i_lambda = b.A_pinv.T @ i_f

    lhs = M @ (np.asarray(qdot_plus) - qm)
    scale = float(np.max(np.abs(M @ qm), initial=0.0) + np.max(np.abs(iu), initial=0.0) + np.max(np.abs(lhs), initial=0.0))
    _assert_close(lhs, iu + i_f, scale, "impulse-momentum balance")
    return i_f, i_lambda


def energy_audit(prob: ImpactProblem, record: ImpactRecord):
    """Energy change of the impact, computed twice and cross-checked.

    The closed-form quadratic (in ``qd-`` and ``i_u``) is compared with
    ``K+ - K-`` evaluated from the velocities. Returns ``(W_loss, gamma)``
    taken from the quadratic form, which avoids the cancellation in
    ``K+ - K-``.
    """
    b = prob.bundle
    M, qm, iu = prob.M, prob.qdot_minus, prob.i_u
    Sq = b.S @ qm
    if prob.E is None:
        e = prob.e_global
        W = -0.5 * (1.0 - e * e) * float(Sq @ M @ Sq)
    else:
        Et = transformed_restitution(b, prob.E)
        SEq = b.S @ (Et @ qm)
        W = 0.5 * float(SEq @ M @ SEq) - 0.5 * float(Sq @ M @ Sq)
    if prob.has_external_impulse:
        W += 0.5 * float(iu @ b.Mo_pinv @ iu) + float(qm @ iu - Sq @ iu)

    direct = record.K_plus - record.K_minus
    scale = max(record.K_minus, record.K_plus, abs(W))
    if abs(direct - W) > CHECK_RTOL * scale + 1e-300:
        raise InternalConsistencyError(
            f"energy audit: quadratic form {W!r} disagrees with K+ - K- = {direct!r}"
        )
    return W, _gamma_ratio(record.K_minus, W)


def _finish(prob: ImpactProblem, qdot_plus, target_rate, consistency=None) -> ImpactRecord:
    b = prob.bundle
    M, qm = prob.M, prob.qdot_minus
    res = _restitution_residual(b, qdot_plus, target_rate)
    scale = float(np.linalg.norm(b.A)) * float(np.linalg.norm(qm) + np.linalg.norm(qdot_plus))
    _assert_close(res, 0.0, scale, "restitution law")

    i_f, i_lambda = generalized_impulse(prob, qdot_plus)
    p_minus, p_plus = M @ qm, M @ qdot_plus
    K_minus, K_plus = _kinetic(M, qm), _kinetic(M, qdot_plus)
    rec = ImpactRecord(
        qdot_minus=qm.copy(),
        qdot_plus=qdot_plus,
        i_f=i_f,
        i_lambda=i_lambda,
        p_minus=p_minus,
        p_plus=p_plus,
        K_minus=K_minus,
        K_plus=K_plus,
        W_loss=K_plus - K_minus,
        gamma=_gamma_ratio(K_minus, K_plus - K_minus),
        qdot_bar=0.5 * (qm + qdot_plus),
        participating=tuple(prob.participating),
        nonunique_multipliers=b.redundant,
        consistency=consistency,
    )
    rec.W_loss, rec.gamma = energy_audit(prob, rec)
    if b.redundant:
        rec.notes.append("impact rows are linearly dependent; i_lambda is the minimum-norm choice")
    return rec


def resolve_impact_global(prob: ImpactProblem) -> ImpactRecord:
    """Post-impact state for one restitution coefficient shared by all contacts."""
    if prob.e_global is None:
        raise InvalidInputError("resolve_impact_global needs e_global")
    e = float(prob.e_global)
    if not (0.0 <= e <= 1.0):
        raise InvalidInputError(f"global restitution coefficient {e} outside [0, 1]")
    b = prob.bundle
    qm = prob.qdot_minus
    qdot_plus = qm - (e + 1.0) * (b.S @ qm) + b.Mo_pinv @ prob.i_u
    return _finish(prob, qdot_plus, -e * (b.A @ qm))


def resolve_impact_matrix(prob: ImpactProblem) -> ImpactRecord:
    """Post-impact state for per-contact restitution coefficients.

    The consistency certificate is always evaluated and attached to the
    record; an infeasible ``E`` is resolved anyway (callers decide whether
    to refuse it).
    """
    if prob.E is None:
        raise InvalidInputError("resolve_impact_matrix needs E")
    E = prob.E
    if np.any(E < 0):
        raise InvalidInputError("restitution matrix has negative entries")
    nb = prob.n_bilateral
    if nb and (np.any(E[:nb] != 0) or np.any(E[:, :nb] != 0)):
        raise InvalidInputError("bilateral rows of the restitution matrix must be zero")
    b = prob.bundle
    qm = prob.qdot_minus
    Et = transformed_restitution(b, E)
    scale = float(np.linalg.norm(b.A_pinv) * np.linalg.norm(E) * np.linalg.norm(b.A)) + 1.0
    _assert_close(Et @ b.P, 0.0, scale, "Et P = 0")
    _assert_close(b.P @ Et, 0.0, scale, "P Et = 0")

    report = check_consistency(prob.M, b, b.A, E)
    qdot_plus = qm - b.S @ (Et @ qm + qm) + b.Mo_pinv @ prob.i_u
    rec = _finish(prob, qdot_plus, -(E @ (b.A @ qm)), consistency=report)
    if not report.feasible:
        rec.notes.append("restitution matrix is not energetically consistent")
    return rec


def resolve_impact(prob: ImpactProblem) -> ImpactRecord:
    """Dispatch on the restitution representation."""
    if prob.E is not None:
        return resolve_impact_matrix(prob)
    return resolve_impact_global(prob)


def feasibility_tolerance(Q) -> float:
    return 1e-10 * (1.0 + float(np.linalg.norm(Q, 2)) if np.size(Q) else 1.0)


def check_consistency(M, bundle: ProjectionBundle, A, E) -> ConsistencyReport:
    """Certify ``E^T Q E - Q <= 0`` and cross-check it with the block LMI.

    The direct test is ``lambda_max(E^T Q E - Q) <= tol``. The same
    tolerance is folded into the block matrix

        [[Q + tol I, E^T G^T], [G E, M^-1]]

    whose positive semidefiniteness is equivalent (Schur complement on the
    ``M^-1`` block) to ``Q + tol I - E^T Q E >= 0``. Both verdicts must
    agree, otherwise :class:`InternalConsistencyError` is raised. For
    symmetric ``E`` this is the usual ``E Q E - Q`` form.
    """
    M = np.asarray(M, dtype=float)
    A = np.asarray(A, dtype=float)
    E = np.asarray(E, dtype=float)
    m = A.shape[0]
    if A.shape != bundle.A.shape:
        raise InvalidInputError(f"A shape {A.shape} does not match the bundle {bundle.A.shape}")
    if E.shape != (m, m):
        raise InvalidInputError(f"E must be {m}x{m} to match A, got {E.shape}")
    if m == 0:
        return ConsistencyReport(True, np.zeros((0, 0)), 0.0, 0.0, feasibility_tolerance(np.zeros((0, 0))))

    G = bundle.S @ bundle.A_pinv
    Q = G.T @ M @ G
    Q = 0.5 * (Q + Q.T)
    tol = feasibility_tolerance(Q)

    D = E.T @ Q @ E - Q
    worst = float(np.linalg.eigvalsh(0.5 * (D + D.T))[-1])
    qmi_ok = worst <= tol

    Minv = np.linalg.inv(M)
    Minv = 0.5 * (Minv + Minv.T)
    GE = G @ E
    block = np.block([[Q, GE.T], [GE, Minv]])
    lmi_raw = float(np.linalg.eigvalsh(0.5 * (block + block.T))[0])
    shifted = block.copy()
    shifted[:m, :m] += tol * np.eye(m)
    lmi_shifted = float(np.linalg.eigvalsh(0.5 * (shifted + shifted.T))[0])
    lmi_ok = lmi_shifted >= 0.0

    if qmi_ok != lmi_ok:
        raise InternalConsistencyError(
            f"quadratic and Schur-complement tests disagree (lambda_max={worst:.3e}, "
            f"block min eigenvalue={lmi_shifted:.3e}, tol={tol:.3e})"
        )
    return ConsistencyReport(qmi_ok, Q, worst, lmi_raw, tol)


def require_consistent(report: ConsistencyReport):
    """Raise :class:`InconsistentRestitutionError` for an infeasible certificate."""
    if not report.feasible:
        raise InconsistentRestitutionError(
            "restitution matrix violates energetic consistency: "
            f"lambda_max(E Q E - Q) = {report.worst_eigenvalue:.17g} > {report.tol:.3g}",
            worst_eigenvalue=report.worst_eigenvalue,
        )
