"""Randomized identity suites over the projector family and the impact maps.

Each suite draws ``count`` independent cases, each from its own seed
spawned off the master seed, evaluates a set of named identities and keeps
the worst relative residual of each. Reports are plain data and format to
text deterministically (no timings).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import impact
from .projection import build_bundle, pseudo_inverse

__all__ = [
    "SUITES",
    "IdentityResult",
    "SuiteReport",
    "boundary_restitution",
    "random_impact_case",
    "random_jacobian",
    "random_spd",
    "run_suite",
    "run_suites",
]

SUITES = ("projections", "impacts", "energy", "qmi-lmi")
TOL = 1e-9
# finite-difference oracle for the projector rate; truncation limited
FD_TOL = 1e-6
FD_STEP = 1e-5


# -- random problem generators --------------------------------------------


def random_spd(rng: np.random.Generator, n: int, cond: float = 1e3) -> np.ndarray:
    """SPD matrix with log-uniform spectrum in ``s * [1, cond]``."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.exp(rng.uniform(0.0, np.log(cond), n))
    lam *= 10.0 ** rng.uniform(-1, 1)
    M = (Q * lam) @ Q.T
    return 0.5 * (M + M.T)


def random_jacobian(rng, n, m=None, rank=None, with_rate=False):
    """Random ``m x n`` matrix of prescribed rank, possibly rank deficient.

    With ``with_rate`` a rate ``Adot`` is also returned such that
    ``A(t) = (B + t B1)(C + t C1)`` keeps its rank for small ``t``.
    """
    if m is None:
        m = int(rng.integers(0, n + 3))
    if rank is None:
        rank = int(rng.integers(0, min(m, n) + 1))
    if rank == 0:
        A = np.zeros((m, n))
        return (A, np.zeros((m, n)), None) if with_rate else A
    B = rng.standard_normal((m, rank))
    C = rng.standard_normal((rank, n))
    A = B @ C
    if not with_rate:
        return A
    B1 = rng.standard_normal((m, rank))
    C1 = rng.standard_normal((rank, n))
    path = lambda t: (B + t * B1) @ (C + t * C1)
    return A, B1 @ C + B @ C1, path


def random_impact_case(rng, n=None, full_rank=False, matrix=False):
    """Random impact problem: ``(M, A, n_bilateral, qdot_minus, e_or_E)``.

    ``qdot_minus`` satisfies the bilateral rows exactly. With ``matrix`` a
    diagonal restitution matrix is drawn (zero on bilateral rows).
    """
    if n is None:
        n = int(rng.integers(2, 9))
    M = random_spd(rng, n)
    nb = int(rng.integers(0, min(2, n - 1) + 1))
    mu = int(rng.integers(1, n + 2 - nb))
    m = nb + mu
    if full_rank:
        mu = min(mu, n - nb)
        m = nb + mu
        A = rng.standard_normal((m, n))
    else:
        A = random_jacobian(rng, n, m, rank=int(rng.integers(1, min(m, n) + 1)))
    qd = rng.standard_normal(n)
    if nb:
        qd = qd - pseudo_inverse(A[:nb]) @ (A[:nb] @ qd)
    if matrix:
        E = np.diag(np.concatenate([np.zeros(nb), rng.uniform(0.0, 1.0, mu)]))
        return M, A, nb, qd, E
    return M, A, nb, qd, float(rng.uniform(0.0, 1.0))


def _qmi_worst(Q, E):
    D = E.T @ Q @ E - Q
    return float(np.linalg.eigvalsh(0.5 * (D + D.T))[-1])


def boundary_restitution(M, bundle, D, target=5e-9, tol=1e-8):
    """Scale ``E = s D`` so that ``lambda_max(E Q E - Q)`` lands within ``tol`` of ``target``.

    ``lambda_max`` is nondecreasing in ``s`` for diagonal ``D >= 0`` because
    ``s^2 D Q D`` grows in the Loewner order, so plain bisection applies.
    Returns ``(E, lambda_max)``.
    """
    G = bundle.S @ bundle.A_pinv
    Q = G.T @ M @ G
    Q = 0.5 * (Q + Q.T)
    lo, hi = 0.0, 1.0
    while _qmi_worst(Q, hi * D) < target:
        hi *= 2.0
        if hi > 1e12:
            raise ValueError("restitution direction never becomes infeasible")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        w = _qmi_worst(Q, mid * D)
        if abs(w - target) <= 0.1 * tol:
            return mid * D, w
        if w < target:
            lo = mid
        else:
            hi = mid
    E = 0.5 * (lo + hi) * D
    return E, _qmi_worst(Q, E)


# -- reports --------------------------------------------------------------


@dataclass
class IdentityResult:
    name: str
    tol: float
    max_residual: float = 0.0
    cases: int = 0
    # strict identities need residual < tol (used for sign conditions)
    strict: bool = False

    @property
    def passed(self) -> bool:
        if self.strict:
            return self.max_residual < self.tol
        return self.max_residual <= self.tol

    def add(self, residual: float):
        residual = float(residual)
        if self.cases == 0 or not residual <= self.max_residual:
            # NaN sticks
            self.max_residual = residual
        self.cases += 1


@dataclass
class SuiteReport:
    suite: str
    seed: int
    count: int
    results: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.errors and all(r.passed for r in self.results.values())

    def check(self, name, residual, tol=TOL, strict=False):
        r = self.results.get(name)
        if r is None:
            r = self.results[name] = IdentityResult(name, tol, strict=strict)
        r.add(residual)

    def format(self) -> str:
        lines = [f"suite {self.suite}  seed {self.seed}  cases {self.count}"]
        width = max((len(k) for k in self.results), default=10)
        for r in self.results.values():
            rel = "<" if r.strict else "<="
            verdict = "ok" if r.passed else "FAIL"
            lines.append(
                f"  {r.name:<{width}}  max {r.max_residual: .3e}  {rel} {r.tol:.0e}  n={r.cases:<5d} {verdict}"
            )
        for case, msg in self.errors[:10]:
            lines.append(f"  error in case {case}: {msg}")
        if len(self.errors) > 10:
            lines.append(f"  ... {len(self.errors) - 10} more errors")
        lines.append(f"  result: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _pinv_abs(X, cutoff):
    """SVD pseudo-inverse with an absolute singular-value cutoff."""
    U, s, Vt = np.linalg.svd(X)
    keep = s > cutoff
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def _nrm(X) -> float:
    return float(np.linalg.norm(X, 2)) if np.size(X) else 0.0


def _rel(lhs, rhs, scale) -> float:
    d = np.asarray(lhs, dtype=float) - np.asarray(rhs, dtype=float)
    err = float(np.max(np.abs(d), initial=0.0))
    return err / max(float(scale), 1e-300) if err else 0.0


# -- suites ---------------------------------------------------------------


def _projection_case(rep: SuiteReport, rng):
    n = int(rng.integers(2, 13))
    M = random_spd(rng, n)
    A, Adot, path = random_jacobian(rng, n, with_rate=True)
    b = build_bundle(M, A, Adot)
    I = np.eye(n)
    P, S, R, Mc, Mo_pinv = b.P, b.S, b.R, b.Mc, b.Mo_pinv
    nM, nS = _nrm(M), max(_nrm(S), 1.0)
    Mc_inv = np.linalg.inv(Mc)
    M_inv = np.linalg.inv(M)
    Mo = P @ M @ P

    rep.check("P idempotent", _rel(P @ P, P, 1.0))
    rep.check("P symmetric", _rel(P, P.T, 1.0))
    rep.check("A P = 0", _rel(A @ P, 0.0, max(_nrm(A), 1.0)))
    Ap = b.A_pinv
    sA = max(_nrm(A), 1e-300)
    rep.check("Moore-Penrose A A+ A = A", _rel(A @ Ap @ A, A, sA) if A.size and sA > 1e-300 else 0.0)
    rep.check("Moore-Penrose A+ A A+ = A+", _rel(Ap @ A @ Ap, Ap, max(_nrm(Ap), 1.0)))
    rep.check("Moore-Penrose (A A+) symmetric", _rel(A @ Ap, (A @ Ap).T, 1.0))
    rep.check("Moore-Penrose (A+ A) symmetric", _rel(Ap @ A, (Ap @ A).T, 1.0))
    rep.check("S idempotent", _rel(S @ S, S, nS * nS))
    rep.check("S P = 0", _rel(S @ P, 0.0, nS))
    rep.check("P S^T = 0", _rel(P @ S.T, 0.0, nS))
    rep.check("(I-P) S = I-P", _rel((I - P) @ S, I - P, nS))
    rep.check("M S = S^T M", _rel(M @ S, S.T @ M, nM * nS))
    rep.check("S^T M = S^T M S", _rel(S.T @ M, S.T @ M @ S, nM * nS * nS))
    rep.check("(I-S) M^-1 = Mo+", _rel((I - S) @ M_inv, Mo_pinv, (1 + nS) * _nrm(M_inv)))
    rep.check("M^-1 (I-S^T) = Mo+", _rel(M_inv @ (I - S.T), Mo_pinv, (1 + nS) * _nrm(M_inv)))
    rep.check("P M Mc^-1 P = P", _rel(P @ M @ Mc_inv @ P, P, nM * _nrm(Mc_inv)))
    rep.check("Mo Mc^-1 = P", _rel(Mo @ Mc_inv, P, nM * _nrm(Mc_inv)))
    rep.check("nu Mc^-1 (I-P) = I-P", _rel(b.nu * Mc_inv @ (I - P), I - P, b.nu * _nrm(Mc_inv)))
    rep.check("Mc P = P Mc = P M P", max(_rel(Mc @ P, Mo, nM), _rel(P @ Mc, Mo, nM)))
    rep.check("R^2 = I", _rel(R @ R, I, (1 + 2 * nS) ** 2))
    rep.check("Mo+ = pinv(P M P)", _rel(Mo_pinv, _pinv_abs(Mo, 1e-10 * nM), max(_nrm(Mo_pinv), 1.0)))
    wc = np.linalg.eigvalsh(Mc)
    rep.check("Mc positive definite (-lambda_min/|Mc|)", -wc[0] / wc[-1], tol=0.0, strict=True)

    # conditioning: the chosen nu attains lambda_max/lambda_min of Mo; outside the bracket is worse
    if 0 < b.rank < n:
        V2 = np.linalg.svd(A)[2][b.rank:].T
        mo = np.linalg.eigvalsh(V2.T @ M @ V2)
        best = mo[-1] / mo[0]
        rep.check("cond(Mc) = lmax/lmin(Mo)", abs(np.linalg.cond(Mc) - best) / best, tol=1e-6)
        for nu_out in (0.5 * mo[0], 2.0 * mo[-1]):
            Mc_out = Mo + nu_out * (I - P)
            rep.check("cond grows outside bracket (best/cond - 1)", best / np.linalg.cond(Mc_out) - 1.0, tol=0.0, strict=True)

    # rate terms
    rep.check("Omega skew", _rel(b.Omega, -b.Omega.T, max(_nrm(b.Omega), 1.0)))
    v = P @ rng.standard_normal(n)
    rep.check("Omega v = Lambda v (admissible v)", _rel(b.Omega @ v, b.Lambda @ v, max(_nrm(b.Lambda), 1.0) * max(np.linalg.norm(v), 1.0)))
    if path is not None:
        h = FD_STEP
        Pp = I - pseudo_inverse(path(h)) @ path(h)
        Pm = I - pseudo_inverse(path(-h)) @ path(-h)
        Pdot = (Pp - Pm) / (2 * h)
        rep.check("Lambda + Lambda^T = dP/dt (central FD)", _rel(b.Lambda + b.Lambda.T, Pdot, max(_nrm(Pdot), 1.0)), tol=FD_TOL)


def _impact_case(rep: SuiteReport, rng):
    M, A, nb, qd, e = random_impact_case(rng)
    n = M.shape[0]
    b = build_bundle(M, A)
    I = np.eye(n)
    iu = rng.standard_normal(n) if rng.uniform() < 0.3 else None
    rec = impact.resolve_impact_global(impact.ImpactProblem(M=M, bundle=b, qdot_minus=qd, e_global=e, i_u=iu, n_bilateral=nb))
    qp = rec.qdot_plus
    sA = max(_nrm(A), 1e-300) * (np.linalg.norm(qd) + np.linalg.norm(qp))
    AAp = A @ b.A_pinv
    if iu is None:
        rep.check("restitution law (global)", _rel(AAp @ (A @ qp + e * (A @ qd)), 0.0, sA))
    pm = M @ qd
    rep.check("impulse-momentum balance", _rel(M @ (qp - qd), (0 if iu is None else iu) + rec.i_f,
                                            np.linalg.norm(pm) + (0 if iu is None else np.linalg.norm(iu))))
    nS = max(_nrm(b.S), 1.0)
    if iu is None:
        rep.check("qd+ = (eR + (1-e)(I-S)) qd-", _rel(qp, (e * b.R + (1 - e) * (I - b.S)) @ qd, (1 + 2 * nS) * np.linalg.norm(qd)))
        rep.check("p+ = (eR^T + (1-e)(I-S^T)) p-", _rel(M @ qp, (e * b.R.T + (1 - e) * (I - b.S.T)) @ pm, (1 + 2 * nS) * np.linalg.norm(pm)))

        twice = impact.resolve_impact_global(impact.ImpactProblem(M=M, bundle=b, qdot_minus=qd, e_global=1.0, n_bilateral=nb))
        back = impact.resolve_impact_global(impact.ImpactProblem(M=M, bundle=b, qdot_minus=twice.qdot_plus, e_global=1.0, n_bilateral=nb))
        rep.check("reflection involution (e = 1 twice)", _rel(back.qdot_plus, qd, (1 + 2 * nS) ** 2 * np.linalg.norm(qd)))

        mu = A.shape[0] - nb
        E = np.diag(np.concatenate([np.zeros(nb), np.full(mu, e)]))
        mat = impact.resolve_impact_matrix(impact.ImpactProblem(M=M, bundle=b, qdot_minus=qd, E=E, n_bilateral=nb))
        rep.check("E = eI reproduces global map", _rel(mat.qdot_plus, qp, (1 + 2 * nS) * np.linalg.norm(qd)), tol=1e-10)
        rep.check("restitution law (matrix, range of A)", _rel(AAp @ (A @ mat.qdot_plus + E @ (A @ qd)), 0.0, sA))

        adm = b.P @ qd
        free = impact.resolve_impact_global(impact.ImpactProblem(M=M, bundle=b, qdot_minus=adm, e_global=e, n_bilateral=nb))
        rep.check("zero impulse for admissible qd-", _rel(free.i_f, 0.0, _nrm(M) * np.linalg.norm(qd)))

    StMS = b.S.T @ M @ b.S
    lo1 = np.linalg.eigvalsh(0.5 * (StMS + StMS.T))[0]
    D = M - StMS
    lo2 = np.linalg.eigvalsh(0.5 * (D + D.T))[0]
    rep.check("S^T M S >= 0 and M - S^T M S >= 0", max(0.0, -lo1, -lo2) / _nrm(M))


def _energy_case(rep: SuiteReport, rng):
    M, A, nb, qd, e = random_impact_case(rng)
    b = build_bundle(M, A)
    if rng.uniform() < 0.1:
        e = 1.0
    rec = impact.resolve_impact_global(impact.ImpactProblem(M=M, bundle=b, qdot_minus=qd, e_global=e, n_bilateral=nb))
    K = rec.K_minus
    rep.check("gamma in [0, 1]", max(0.0, rec.gamma - 1.0, -rec.gamma), tol=1e-10)
    if e == 1.0:
        rep.check("gamma = 1 at e = 1", abs(rec.gamma - 1.0))
    Sq = b.S @ qd
    rep.check("W_loss = -(1-e^2)/2 qd^T S^T M S qd", _rel(rec.K_plus - rec.K_minus, -0.5 * (1 - e * e) * (Sq @ M @ Sq), K))
    rep.check("i_f . qd_bar = W_loss", _rel(rec.i_f @ rec.qdot_bar, rec.W_loss, K))
    if e < 1.0 - 1e-6:
        rate_u = (A @ qd)[nb:]
        lhs = rec.i_lambda[nb:] @ rate_u
        rhs = 2.0 * rec.W_loss / (1.0 - e)
        rep.check("i_lambda_u . phidot_u = 2 W_loss / (1-e)", _rel(lhs, rhs, max(K, abs(rhs))))

    M, A, nb, qd, E = random_impact_case(rng, matrix=True)
    b = build_bundle(M, A)
    rec = impact.resolve_impact_matrix(impact.ImpactProblem(M=M, bundle=b, qdot_minus=qd, E=E, n_bilateral=nb))
    G = b.S @ b.A_pinv
    Q = G.T @ M @ G
    phid = A @ qd
    Wq = 0.5 * phid @ (E.T @ Q @ E - Q) @ phid
    rep.check("W_loss = phidot^T (EQE - Q) phidot / 2", _rel(Wq, rec.K_plus - rec.K_minus, rec.K_minus))
    if rec.consistency.feasible:
        rep.check("feasible E never gains energy", max(0.0, rec.gamma - 1.0), tol=1e-10)


def _qmi_case(rep: SuiteReport, rng, boundary):
    M, A, nb, qd, _ = random_impact_case(rng, full_rank=boundary)
    b = build_bundle(M, A)
    m = A.shape[0]
    if boundary:
        D = np.diag(rng.uniform(0.2, 1.0, m))
        E, w = boundary_restitution(M, b, D, target=float(rng.uniform(-5e-9, 5e-9)))
        rep.check("boundary cases: |lambda_max| <= 1e-8", abs(w), tol=1e-8)
    else:
        E = np.diag(rng.uniform(0.0, 1.5, m))
    rpt = impact.check_consistency(M, b, A, E)

    # independent verdicts
    G = b.S @ b.A_pinv
    Q = G.T @ M @ G
    Q = 0.5 * (Q + Q.T)
    tol = 1e-10 * (1.0 + _nrm(Q))
    qmi = _qmi_worst(Q, E) <= tol
    GE = G @ E
    Minv = np.linalg.inv(M)
    blk = np.block([[Q + tol * np.eye(m), GE.T], [GE, 0.5 * (Minv + Minv.T)]])
    lmi = np.linalg.eigvalsh(0.5 * (blk + blk.T))[0] >= 0.0
    rep.check("QMI and LMI verdicts agree", float(qmi != lmi), tol=0.0)
    rep.check("reported verdict matches QMI", float(rpt.feasible != qmi), tol=0.0)
    rep.check("Q >= 0 (-lambda_min/|Q|)", max(0.0, -np.linalg.eigvalsh(Q)[0]) / max(_nrm(Q), 1e-300))


def run_suite(suite: str, seed: int = 0, count: int = 100) -> SuiteReport:
    """Run one suite; case ``k`` uses the ``k``-th seed spawned from ``(seed, suite)``."""
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {SUITES} or 'all'")
    if count < 0:
        raise ValueError("count must be nonnegative")
    rep = SuiteReport(suite, seed, count)
    root = np.random.SeedSequence([int(seed), SUITES.index(suite)])
    # boundary cases take 5% of the qmi-lmi draws (at least one)
    n_boundary = max(1, count // 20) if count else 0
    for k, child in enumerate(root.spawn(count)):
        rng = np.random.default_rng(child)
        try:
            if suite == "projections":
                _projection_case(rep, rng)
            elif suite == "impacts":
                _impact_case(rep, rng)
            elif suite == "energy":
                _energy_case(rep, rng)
            else:
                _qmi_case(rep, rng, boundary=k < n_boundary)
        except Exception as exc:  # a failing case is a finding, not a crash
            rep.errors.append((k, f"{type(exc).__name__}: {exc}"))
    return rep


def run_suites(name: str, seed: int = 0, count: int = 100) -> list:
    names = SUITES if name == "all" else (name,)
    return [run_suite(s, seed, count) for s in names]
