"""Event-driven integration through contact topology changes.

Between events the smooth constrained dynamics are integrated with a fixed
step RK4 or an embedded Dormand-Prince 5(4) pair. Gap zero crossings are
bracketed by bisection on the step length, the impact map is applied at the
non-penetrating end of the bracket, and the active set is updated before
integration resumes.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ScenarioConfig
from .errors import DriftError, StalledEventError
from .impact import ImpactProblem, ImpactRecord, require_consistent, resolve_impact
from .model import (
    ConstraintSet,
    GeneralizedState,
    assemble_jacobian,
    constraint_force,
    multiplier_slots,
    unilateral_accelerations,
    unilateral_rates,
)
from .models import Model, build_model
from .projection import build_bundle, pseudo_inverse

__all__ = ["EventLogEntry", "SimulationResult", "Simulator", "run", "stabilize_drift"]

_EPS = np.finfo(float).eps

# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])

# consecutive events without time advance before giving up
_MAX_EVENTS_PER_INSTANT = 200


@dataclass
class EventLogEntry:
    t: float
    kind: str
    indices: tuple
    active_set_after: tuple
    record: ImpactRecord | None = None
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        rec = self.record
        out = {
            "kind": self.kind,
            "t": self.t,
            "indices": list(self.indices),
            "W_loss": None if rec is None else rec.W_loss,
            "gamma": None if rec is None else rec.gamma,
            "i_f": None if rec is None else rec.i_f.tolist(),
            "i_lambda": None if rec is None else rec.i_lambda.tolist(),
            "active_set_after": [int(i) for i, a in enumerate(self.active_set_after) if a],
        }
        if rec is not None:
            out["qdot_minus"] = rec.qdot_minus.tolist()
            out["qdot_plus"] = rec.qdot_plus.tolist()
            out["nonunique_multipliers"] = rec.nonunique_multipliers
            if rec.consistency is not None:
                out["consistency_feasible"] = rec.consistency.feasible
                out["consistency_eigenvalue"] = rec.consistency.worst_eigenvalue
        if self.notes:
            out["notes"] = list(self.notes)
        return out


@dataclass
class SimulationResult:
    columns: list
    trajectory: np.ndarray
    events: list
    summary: dict
    state: GeneralizedState
    constraints: ConstraintSet


def stabilize_drift(state: GeneralizedState, cs: ConstraintSet, mass, drift_tol=1e-10, rank_tol=None, max_iter=20):
    """Project ``q`` onto the active constraint manifold and ``qd`` onto its tangent space.

    Position: damped Gauss-Newton on the active constraint residual,
    skipped when it is already within ``drift_tol``. Velocity: ``qd <- P qd``.
    """
    rows = np.flatnonzero(cs.gamma)
    if cs.m_b == 0 and rows.size == 0:
        return state
    q = np.array(state.q, dtype=float)

    def residual(x):
        return np.concatenate([cs.bilateral_residual(x), cs.gaps(x)[rows]])

    phi = residual(q)
    if np.max(np.abs(phi), initial=0.0) > drift_tol:
        for _ in range(max_iter):
            A = assemble_jacobian(cs, q).A
            dq = -pseudo_inverse(A, rank_tol) @ phi
            norm0 = np.linalg.norm(phi)
            alpha = 1.0
            while True:
                trial = q + alpha * dq
                phi_t = residual(trial)
                if np.linalg.norm(phi_t) < norm0 or alpha < 1 / 64:
                    break
                alpha *= 0.5
            q, phi = trial, phi_t
            if np.linalg.norm(alpha * dq) <= 64 * _EPS * (1.0 + np.linalg.norm(q)):
                break
        if np.max(np.abs(phi), initial=0.0) > drift_tol:
            raise DriftError(f"constraint projection did not converge: |phi| = {np.max(np.abs(phi)):.3e}")

    A = assemble_jacobian(cs, q).A
    b = build_bundle(mass(q), A, rank_tol=rank_tol)
    qd = b.P @ np.asarray(state.qdot, dtype=float)
    return GeneralizedState(state.t, q, qd, cs.gamma.copy())


class Simulator:
    """Owns the model callbacks and settings of one simulation.

    A simulation is strictly sequential; create one instance per run.
    """

    def __init__(self, model: Model, cfg: ScenarioConfig):
        self.model = model
        self.sd = model.dynamics
        self.cfg = cfg
        self.tol = cfg.tolerances
        self.n = model.n
        self._cache = {}
        self._cacheable = model.constraints.linear and self.sd.constant_mass
        self._zero_advance = 0

    # -- smooth dynamics -------------------------------------------------

    def bundle(self, cs: ConstraintSet, q, qd, include_impacting=False):
        if self._cacheable and not include_impacting:
            key = cs.gamma.tobytes()
            hit = self._cache.get(key)
            if hit is None:
                jac = assemble_jacobian(cs, q, qdot=qd)
                hit = self._cache[key] = (jac, build_bundle(self.sd.mass_matrix(q), jac.A, jac.Adot, rank_tol=self.tol.rank_tol))
            return hit
        jac = assemble_jacobian(cs, q, include_impacting=include_impacting, qdot=qd)
        return jac, build_bundle(self.sd.mass_matrix(q), jac.A, jac.Adot, rank_tol=self.tol.rank_tol)

    def multipliers(self, cs: ConstraintSet, state: GeneralizedState):
        """``(f, lambda_b, lambda_u)`` for the active set of ``cs``."""
        jac, b = self.bundle(cs, state.q, state.qdot)
        f, lam = constraint_force(self.sd, b, state)
        lb, lu = multiplier_slots(jac, lam, cs.m_u)
        return f, lb, lu

    def _rhs(self, t, y, cs):
        # same expressions as constrained_acceleration/constraint_force, minus the
        # unconstrained solve and the multipliers
        n = self.n
        q, qd = y[:n], y[n:]
        jac, b = self.bundle(cs, q, qd)
        rhs = self.sd.input_force(t, q, qd) - self.sd.bias_force(q, qd)
        qdd = b.Mo_pinv @ rhs
        if jac.m:
            qdd += b.S @ (b.Omega @ qd)
        return np.concatenate([qd, qdd])

    def _single_step(self, t, y, h, cs):
        """One step of the configured scheme; returns ``(y_new, error_estimate)``."""
        f = lambda tt, yy: self._rhs(tt, yy, cs)
        if self.cfg.integrator.method == "rk4":
            k1 = f(t, y)
            k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
            k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
            k4 = f(t + h, y + h * k3)
            return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4), None
        K = []
        for i in range(7):
            yi = y + h * sum((a * k for a, k in zip(_DP_A[i], K)), np.zeros_like(y))
            K.append(f(t + _DP_C[i] * h, yi))
        K = np.array(K)
        y5 = y + h * (_DP_B5 @ K)
        err = h * ((_DP_B5 - _DP_B4) @ K)
        return y5, err

    def _error_norm(self, y0, y1, err):
        it = self.cfg.integrator
        sc = it.atol + it.rtol * np.maximum(np.abs(y0), np.abs(y1))
        return float(np.max(np.abs(err) / sc))

    # -- activation ------------------------------------------------------

    def _sign_checked(self, cs: ConstraintSet, state: GeneralizedState, candidates):
        """Keep the candidate rows whose incipient multiplier is nonnegative."""
        keep = candidates.copy()
        while keep.any():
            trial = cs.with_activation(gamma=cs.gamma | keep)
            _, _, lu = self.multipliers(trial, state)
            bad = keep & (lu < -self.tol.lambda_tol)
            if not bad.any():
                break
            # drop the most negative first; multipliers of the others may change
            worst = np.argmin(np.where(bad, lu, np.inf))
            keep[worst] = False
        return keep

    def activate_resting(self, state: GeneralizedState, cs: ConstraintSet):
        """Activate closed, non-moving gaps that would carry a compressive force."""
        if cs.m_u == 0:
            return cs, np.zeros(0, dtype=bool)
        gaps = cs.gaps(state.q)
        rate = unilateral_rates(cs, state.q, state.qdot)
        cand = (~cs.gamma) & (gaps <= self.tol.act_tol) & (np.abs(rate) <= self.tol.vel_tol)
        if not cand.any():
            return cs, cand
        keep = self._sign_checked(cs, state, cand)
        return cs.with_activation(gamma=cs.gamma | keep), keep

    # -- events ----------------------------------------------------------

    def _impact_problem(self, cs, q, qd, participants):
        impact_cs = cs.with_activation(gamma_star=participants)
        jac = assemble_jacobian(impact_cs, q, include_impacting=True)
        M = self.sd.mass_matrix(q)
        b = build_bundle(M, jac.A, rank_tol=self.tol.rank_tol)
        e = impact_cs.restitution
        kw = {}
        if isinstance(e, np.ndarray):
            kw["E"] = np.diag(np.concatenate([np.zeros(jac.n_bilateral), e[jac.unilateral_rows]]))
        elif e > 1.0:
            # only reachable with allow_inconsistent; route through the matrix form
            kw["E"] = np.diag(np.concatenate([np.zeros(jac.n_bilateral), np.full(jac.unilateral_rows.size, e)]))
        else:
            kw["e_global"] = float(e)
        return ImpactProblem(
            M=M, bundle=b, qdot_minus=qd, n_bilateral=jac.n_bilateral,
            participating=tuple(int(i) for i in np.flatnonzero(participants)), **kw,
        )

    def _handle_event(self, state: GeneralizedState, cs: ConstraintSet, gaps_right):
        """Resolve the contact event found at ``state`` (left end of the bracket)."""
        tol = self.tol
        events = []
        inactive = ~cs.gamma
        gaps = cs.gaps(state.q)
        rate = unilateral_rates(cs, state.q, state.qdot)
        touching = inactive & ((gaps_right < 0) | (gaps <= tol.gap_tol))
        participants = touching & (rate < -tol.vel_tol)
        grazing = inactive & (gaps_right < 0) & (rate >= -tol.vel_tol) & (rate <= tol.vel_tol)

        qd_plus = state.qdot
        record = None
        notes = []
        if participants.any():
            prob = self._impact_problem(cs, state.q, state.qdot, participants)
            record = resolve_impact(prob)
            if record.consistency is not None and not self.cfg.allow_inconsistent:
                require_consistent(record.consistency)
            qd_plus = record.qdot_plus

        rate_plus = unilateral_rates(cs, state.q, qd_plus)
        stuck = participants & (rate_plus <= tol.vel_tol)
        rebounding = participants & ~stuck
        if rebounding.any():
            # a rebound whose apex stays inside gap_tol is numerically resting
            y = np.concatenate([state.q, qd_plus])
            qdd = self._rhs(state.t, y, cs)[self.n:]
            acc = unilateral_accelerations(cs, state.q, qd_plus, qdd)
            with np.errstate(divide="ignore"):
                apex = np.where(acc < 0, rate_plus**2 / (-2.0 * acc), np.inf)
            stuck |= rebounding & (apex <= tol.gap_tol)
        e = cs.restitution
        bouncy = (e[stuck] > 0).any() if isinstance(e, np.ndarray) else (e > 0 and stuck.any())
        if bouncy:
            notes.append("zeno: rebound below vel_tol or apex below gap_tol, promoted to persistent contact")

        after = GeneralizedState(state.t, state.q, qd_plus, cs.gamma)
        keep = self._sign_checked(cs, after, stuck | grazing)
        new_cs = cs.with_activation(gamma=cs.gamma | keep, gamma_star=np.zeros(cs.m_u, dtype=bool))
        active_after = tuple(bool(a) for a in new_cs.gamma)
        if record is not None:
            events.append(EventLogEntry(state.t, "impact", record.participating, active_after, record, notes))
        if keep.any():
            events.append(EventLogEntry(state.t, "activation", tuple(int(i) for i in np.flatnonzero(keep)), active_after))
        if record is None and not keep.any():
            raise StalledEventError(f"gap crossing at t={state.t!r} could not be resolved", state=state)
        return GeneralizedState(state.t, state.q, qd_plus, new_cs.gamma.copy()), new_cs, events

    # -- stepping --------------------------------------------------------

    def step(self, state: GeneralizedState, cs: ConstraintSet, h: float):
        """Advance by at most ``h``.

        Returns ``(state, cs, events, h_taken, h_next)``. When a contact
        event is found the step stops at the event time.
        """
        tol = self.tol
        it = self.cfg.integrator
        n = self.n
        events = []

        if cs.gamma.any():
            # sign of the contact force at the step start; the set is then frozen
            _, _, lu = self.multipliers(cs, state)
            released = cs.gamma & (lu < -tol.lambda_tol)
            if released.any():
                cs = cs.with_activation(gamma=cs.gamma & ~released)
                events.append(EventLogEntry(state.t, "deactivation", tuple(int(i) for i in np.flatnonzero(released)), tuple(bool(a) for a in cs.gamma)))
        cs, fresh = self.activate_resting(state, cs)
        if fresh.any():
            events.append(EventLogEntry(state.t, "activation", tuple(int(i) for i in np.flatnonzero(fresh)), tuple(bool(a) for a in cs.gamma)))

        y0 = np.concatenate([state.q, state.qdot])
        h_next = h
        while True:
            y1, err = self._single_step(state.t, y0, h, cs)
            if err is None:
                break
            en = self._error_norm(y0, y1, err)
            if en <= 1.0 and np.all(np.isfinite(y1)):
                h_next = min(it.step_size, h * min(5.0, 0.9 * max(en, 1e-10) ** -0.2))
                break
            h *= max(0.2, 0.9 * en ** -0.2) if np.isfinite(en) else 0.2
            if h < it.min_step:
                raise StalledEventError(f"step size {h:.3e} below min_step at t={state.t!r}", state=state)

        q1 = y1[:n]
        if cs.m_u and (~cs.gamma).any():
            g0 = cs.gaps(state.q)
            g1 = cs.gaps(q1)
            cand = (~cs.gamma) & (g1 < 0) & (g1 < g0)
            if cand.any():
                return self._locate(state, cs, y0, y1, h, cand, events, h_next)

        self._zero_advance = 0
        new = GeneralizedState(state.t + h, q1, y1[n:], cs.gamma.copy())
        new = stabilize_drift(new, cs, self.sd.mass_matrix, tol.drift_tol, tol.rank_tol)
        return new, cs, events, h, h_next

    def _locate(self, state, cs, y0, y1, h, cand, events, h_next):
        n = self.n
        lo, hi = 0.0, h
        y_lo, y_hi = y0, y1
        # fixed-length steps from the bracket start; no adaptivity inside the bracket
        while hi - lo > self.tol.event_tol:
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            ym, _ = self._single_step(state.t, y0, mid, cs)
            if np.any(cs.gaps(ym[:n])[cand] < 0):
                hi, y_hi = mid, ym
            else:
                lo, y_lo = mid, ym
        if lo == 0.0:
            self._zero_advance += 1
            if self._zero_advance > _MAX_EVENTS_PER_INSTANT:
                raise StalledEventError(f"event storm at t={state.t!r}", state=state)
        else:
            self._zero_advance = 0
        at = GeneralizedState(state.t + lo, y_lo[:n], y_lo[n:], cs.gamma.copy())
        gaps_right = cs.gaps(y_hi[:n])
        post, cs, ev = self._handle_event(at, cs, gaps_right)
        post = stabilize_drift(post, cs, self.sd.mass_matrix, self.tol.drift_tol, self.tol.rank_tol)
        events.extend(ev)
        return post, cs, events, lo, h_next


def _drift(cs: ConstraintSet, q) -> float:
    r = np.concatenate([cs.bilateral_residual(q), cs.gaps(q)[cs.gamma]])
    return float(np.max(np.abs(r), initial=0.0))


def _mask(gamma) -> int:
    return int(sum(1 << int(i) for i in np.flatnonzero(gamma)))


def run(cfg: ScenarioConfig, output_dir=None, model: Model | None = None) -> SimulationResult:
    """Run a scenario end to end and write the configured output files.

    Output paths are resolved against ``output_dir`` when given. The
    trajectory and event log depend only on ``cfg``; the summary also
    reports wall time.
    """
    t_wall = time.perf_counter()
    if model is None:
        model = build_model(cfg.model.name, cfg.model.params)
    sim = Simulator(model, cfg)
    n = model.n
    it = cfg.integrator
    columns = ["t"] + [f"q_{i + 1}" for i in range(n)] + [f"qd_{i + 1}" for i in range(n)] + ["K", "active_mask"]

    cs = model.constraints
    state = GeneralizedState(0.0, model.q0.copy(), model.qd0.copy(), cs.gamma.copy())
    rows, events = [], []
    max_drift, min_gap = 0.0, np.inf
    n_steps = 0
    t_end = it.t_end

    def sample(st, c):
        nonlocal max_drift, min_gap
        rows.append([st.t, *st.q, *st.qdot, model.kinetic_energy(st.q, st.qdot), _mask(c.gamma)])
        max_drift = max(max_drift, _drift(c, st.q))
        if c.m_u:
            min_gap = min(min_gap, float(np.min(c.gaps(st.q))))

    if t_end > 0:
        cs, _ = sim.activate_resting(state, cs)
        state = stabilize_drift(state, cs, model.dynamics.mass_matrix, cfg.tolerances.drift_tol, cfg.tolerances.rank_tol)
        sample(state, cs)

    h = it.step_size
    t_guard = 4 * _EPS * max(1.0, t_end)
    while state.t < t_end - t_guard:
        h_try = min(h, t_end - state.t)
        prev = state
        state, cs, ev, h_taken, h = sim.step(state, cs, h_try)
        n_steps += 1
        if ev:
            for e in ev:
                if e.kind == "impact":
                    rows.append([prev.t + h_taken, *state.q, *e.record.qdot_minus,
                                 e.record.K_minus, _mask(prev.active_set)])
            events.extend(ev)
            sample(state, cs)
        elif n_steps % cfg.outputs.sample_stride == 0 or state.t >= t_end - t_guard:
            sample(state, cs)

    impacts = [e for e in events if e.kind == "impact"]
    summary = {
        "model": cfg.model.name,
        "method": it.method,
        "step_size": it.step_size,
        "t_end": t_end,
        "t_final": state.t,
        "steps": n_steps,
        "samples": len(rows),
        "events": len(events),
        "impacts": len(impacts),
        "cumulative_W_loss": float(sum(e.record.W_loss for e in impacts)),
        "max_drift": max_drift,
        "min_gap": None if not np.isfinite(min_gap) else min_gap,
        "wall_time": time.perf_counter() - t_wall,
    }
    traj = np.array(rows, dtype=float).reshape(-1, len(columns))
    result = SimulationResult(columns, traj, events, summary, state, cs)
    _write_outputs(result, cfg, output_dir)
    return result


def _resolve(path, output_dir):
    p = Path(path)
    if output_dir is not None and not p.is_absolute():
        p = Path(output_dir) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _write_outputs(result: SimulationResult, cfg: ScenarioConfig, output_dir):
    out = cfg.outputs
    if out.trajectory_path:
        path = _resolve(out.trajectory_path, output_dir)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(result.columns)
            for row in result.trajectory:
                w.writerow([repr(float(v)) for v in row[:-1]] + [int(row[-1])])
    if out.events_path:
        path = _resolve(out.events_path, output_dir)
        with path.open("w", encoding="utf-8") as fh:
            for e in result.events:
                fh.write(json.dumps(e.to_json()) + "\n")
