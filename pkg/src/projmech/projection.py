"""Dense projector kernels for constrained multibody dynamics.

Everything here is a pure function of its array arguments. The central
object is :class:`ProjectionBundle`, the family of matrices derived from a
mass matrix ``M`` and a (possibly rank deficient) constraint Jacobian ``A``:

* ``P = I - A^+ A``, orthogonal projector onto ``null(A)``;
* ``Lambda = -A^+ Adot P`` and its skew part ``Omega = Lambda - Lambda^T``;
* ``Mc = P M P + nu (I - P)``, the regularised constraint inertia;
* ``Mo_pinv = Mc^-1 P``, the pseudo-inverse of ``P M P``;
* ``S = I - Mc^-1 P M``, an ``M``-self-adjoint oblique projector;
* ``R = I - 2 S``, the associated reflection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import InvalidInputError

EPS = np.finfo(float).eps

__all__ = [
    "ProjectionBundle",
    "build_bundle",
    "constraint_inertia",
    "default_rank_tol",
    "jacobian_rate_terms",
    "null_space_basis",
    "numerical_rank",
    "oblique_projector",
    "orthogonal_projector",
    "pseudo_inverse",
]


def default_rank_tol(m: int, n: int) -> float:
    """Relative singular value cutoff ``max(m, n) * eps``."""
    return max(m, n, 1) * EPS


def _as_matrix(A, name="A") -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise InvalidInputError(f"{name} must be a 2-D array, got shape {A.shape}")
    if A.shape[1] < 1:
        raise InvalidInputError(f"{name} must have at least one column")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return A


def _svd(A: np.ndarray, rank_tol: float | None):
    """Full SVD plus numerical rank under the relative cutoff."""
    m, n = A.shape
    if rank_tol is None:
        rank_tol = default_rank_tol(m, n)
    if rank_tol < 0:
        raise InvalidInputError("rank_tol must be nonnegative")
    if m == 0:
        return np.zeros((0, 0)), np.zeros(0), np.eye(n), 0
    U, s, Vt = np.linalg.svd(A, full_matrices=True)
    if s.size == 0 or s[0] == 0.0:
        return U, s, Vt, 0
    r = int(np.count_nonzero(s > rank_tol * s[0]))
    return U, s, Vt, r


def numerical_rank(A, rank_tol: float | None = None) -> int:
    """Number of singular values above ``rank_tol * sigma_max``."""
    A = _as_matrix(A)
    return _svd(A, rank_tol)[3]


def pseudo_inverse(A, rank_tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudo-inverse with a relative rank cutoff.

    Singular values at or below ``rank_tol * sigma_max`` are treated as exact
    zeros, which is the vanishing-regularisation limit of
    ``A^T (A A^T + eps I)^-1``.

    Parameters
    ----------
    A : array_like, shape (m, n)
        ``m`` may be zero (no active constraints).
    rank_tol : float, optional
        Relative cutoff; defaults to ``max(m, n) * machine_eps``.

    Returns
    -------
    ndarray, shape (n, m)
    """
    A = _as_matrix(A)
    m, n = A.shape
    U, s, Vt, r = _svd(A, rank_tol)
    if r == 0:
        return np.zeros((n, m))
    return (Vt[:r].T / s[:r]) @ U[:, :r].T


def null_space_basis(A, rank_tol: float | None = None) -> np.ndarray:
    """Orthonormal basis (columns) of the numerical null space of ``A``."""
    A = _as_matrix(A)
    _, _, Vt, r = _svd(A, rank_tol)
    return Vt[r:].T.copy()


def orthogonal_projector(A, rank_tol: float | None = None) -> np.ndarray:
    """``P = I - A^+ A``, the orthogonal projector onto ``null(A)``.

    Built from the right singular vectors so that ``P`` is symmetric and
    idempotent to working precision even for rank deficient ``A``.
    """
    A = _as_matrix(A)
    n = A.shape[1]
    _, _, Vt, r = _svd(A, rank_tol)
    if r == 0:
        return np.eye(n)
    V1 = Vt[:r].T
    P = np.eye(n) - V1 @ V1.T
    return 0.5 * (P + P.T)


def jacobian_rate_terms(A, Adot, P, A_pinv=None):
    """Velocity-to-normal-acceleration map from the Jacobian rate.

    Returns ``(Lambda, Omega)`` with ``Lambda = -A^+ Adot P`` and
    ``Omega = Lambda - Lambda^T``. Since ``Lambda^T P = 0``, ``Omega qd``
    equals ``Lambda qd`` and ``Pdot qd`` for every admissible velocity
    (``P qd = qd``), while ``Omega`` stays exactly skew-symmetric.
    """
    A = np.asarray(A, dtype=float)
    Adot = np.asarray(Adot, dtype=float)
    P = np.asarray(P, dtype=float)
    if A.ndim != 2 or Adot.shape != A.shape:
        raise InvalidInputError(
            f"Adot shape {Adot.shape} does not match A shape {A.shape}"
        )
    n = A.shape[1]
    if P.shape != (n, n):
        raise InvalidInputError(f"P must be {n}x{n}, got {P.shape}")
    if A.shape[0] == 0:
        Z = np.zeros((n, n))
        return Z, Z.copy()
    if A_pinv is None:
        A_pinv = pseudo_inverse(A)
    Lam = -A_pinv @ Adot @ P
    return Lam, Lam - Lam.T


def _check_spd(M, name="M") -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError(f"{name} has non-finite entries")
    scale = max(np.max(np.abs(M)), 1e-300)
    if np.max(np.abs(M - M.T)) > 1e-10 * scale:
        raise InvalidInputError(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise InvalidInputError(f"{name} is not positive definite") from None
    return 0.5 * (M + M.T)


def _range_basis_of_projector(P: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (P + P.T))
    return V[:, w > 0.5]


def constraint_inertia(M, P, nu_policy="geometric-mean"):
    """Regularised constraint inertia ``Mc = P M P + nu (I - P)``.

    Parameters
    ----------
    M : array_like, shape (n, n)
        Symmetric positive-definite mass matrix.
    P : array_like, shape (n, n)
        Orthogonal projector onto the admissible velocity subspace.
    nu_policy : {"geometric-mean"} or float
        ``"geometric-mean"`` picks ``sqrt(lmin * lmax)`` of the nonzero
        spectrum of ``P M P``; any value in ``[lmin, lmax]`` attains the
        minimal condition number ``lmax / lmin``. A positive float forces
        ``nu`` (used to probe the conditioning claim).

    Returns
    -------
    Mc : ndarray
    nu : float
    Mo_pinv : ndarray
        ``Mc^-1 P``, the pseudo-inverse of ``P M P``.
    """
    M = _check_spd(M)
    P = np.asarray(P, dtype=float)
    n = M.shape[0]
    if P.shape != (n, n):
        raise InvalidInputError(f"P must be {n}x{n}, got {P.shape}")
    Mc, nu, Mo_pinv, _ = _inertia(M, P, _range_basis_of_projector(P), nu_policy)
    return Mc, nu, Mo_pinv


def _inertia(M, P, V2, nu_policy):
    """Shared core of :func:`constraint_inertia`; ``V2`` spans range(P). Also returns the factor of ``Mc``."""
    n = M.shape[0]
    if V2.shape[1] == 0:
        # P = 0: every direction constrained, Mc = nu I
        spec = np.linalg.eigvalsh(M)
    else:
        spec = np.linalg.eigvalsh(V2.T @ M @ V2)

    if isinstance(nu_policy, str):
        if nu_policy != "geometric-mean":
            raise InvalidInputError(f"unknown nu policy {nu_policy!r}")
        nu = float(np.sqrt(spec[0] * spec[-1]))
    else:
        nu = float(nu_policy)
        if not (nu > 0 and np.isfinite(nu)):
            raise InvalidInputError("nu must be a positive finite number")

    Mc = P @ M @ P + nu * (np.eye(n) - P)
    Mc = 0.5 * (Mc + Mc.T)
    try:
        factor = sla.cho_factor(Mc)
    except np.linalg.LinAlgError:
        raise InvalidInputError("constraint inertia is not positive definite") from None
    Mo_pinv = sla.cho_solve(factor, P)
    Mo_pinv = 0.5 * (Mo_pinv + Mo_pinv.T)
    return Mc, nu, Mo_pinv, factor


def oblique_projector(M, Mc, P):
    """``S = I - Mc^-1 P M`` and the reflection ``R = I - 2 S``."""
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    factor = sla.cho_factor(np.asarray(Mc, dtype=float))
    S = np.eye(n) - sla.cho_solve(factor, np.asarray(P, dtype=float) @ M)
    return S, np.eye(n) - 2.0 * S


@dataclass(frozen=True)
class ProjectionBundle:
    """Projector family for one active constraint set at one configuration."""

    P: np.ndarray
    Lambda: np.ndarray
    Omega: np.ndarray
    Mc: np.ndarray
    nu: float
    Mo_pinv: np.ndarray
    S: np.ndarray
    R: np.ndarray
    A: np.ndarray
    A_pinv: np.ndarray
    rank: int

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def redundant(self) -> bool:
        """True when the rows of ``A`` are linearly dependent."""
        return self.rank < self.m


def build_bundle(M, A, Adot=None, rank_tol: float | None = None, nu_policy="geometric-mean"):
    """Assemble a :class:`ProjectionBundle` from scratch.

    ``Adot`` may be omitted for impact problems, where only ``P``, ``S``
    and friends are needed; ``Lambda`` and ``Omega`` are then zero.
    """
    M = _check_spd(M)
    n = M.shape[0]
    A = np.asarray(A, dtype=float).reshape(-1, n)
    A = _as_matrix(A)
    U, s, Vt, r = _svd(A, rank_tol)
    m = A.shape[0]
    if r == 0:
        A_pinv = np.zeros((n, m))
        P = np.eye(n)
    else:
        A_pinv = (Vt[:r].T / s[:r]) @ U[:, :r].T
        V1 = Vt[:r].T
        P = np.eye(n) - V1 @ V1.T
        P = 0.5 * (P + P.T)
    if Adot is None:
        Lam = np.zeros((n, n))
        Om = np.zeros((n, n))
    else:
        Lam, Om = jacobian_rate_terms(A, Adot, P, A_pinv=A_pinv)
    Mc, nu, Mo_pinv, factor = _inertia(M, P, Vt[r:].T, nu_policy)
    if r == 0:
        S = np.zeros((n, n))  # no constrained directions: exact identity maps
    else:
        S = np.eye(n) - sla.cho_solve(factor, P @ M)
    R = np.eye(n) - 2.0 * S
    return ProjectionBundle(
        P=P, Lambda=Lam, Omega=Om, Mc=Mc, nu=nu, Mo_pinv=Mo_pinv,
        S=S, R=R, A=A, A_pinv=A_pinv, rank=r,
    )
