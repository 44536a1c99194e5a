"""Command-line front end.

Exit codes: 0 success, 1 file not found or unreadable, 2 validation error,
3 runtime failure (stalled integration, drift), 4 energetically inconsistent
restitution, 5 internal consistency failure (including failed verify suites).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import impact
from .config import dumps_toml, load_problem, load_scenario
from .errors import InconsistentRestitutionError, InternalConsistencyError, ProjmechError, StalledEventError
from .projection import build_bundle
from .simulator import run
from .verification import SUITES, run_suites

EXIT_OK = 0
EXIT_IO = 1


def _fmt(v) -> str:
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        return "%.17g" % float(arr)
    return np.array2string(arr, precision=17, floatmode="maxprec", separator=", ", max_line_width=200)


def _path(args):
    p = args.path or args.config
    if p is None:
        raise _UsageError("a problem or scenario file is required (positional or --config)")
    return p


class _UsageError(Exception):
    pass


def cmd_simulate(args) -> int:
    overrides = list(args.override or [])
    if args.allow_inconsistent:
        overrides.append("allow_inconsistent=true")
    cfg = load_scenario(_path(args), overrides)
    out = cfg.outputs
    if not out.trajectory_path:
        out.trajectory_path = "trajectory.csv"
    if not out.events_path:
        out.events_path = "events.jsonl"
    out_dir = Path(args.out) if args.out else Path.cwd()
    try:
        result = run(cfg, output_dir=out_dir)
    except StalledEventError as exc:
        if exc.state is not None:
            st = exc.state
            print(f"# stalled state: t = {st.t!r}", file=sys.stderr)
            print(f"# q = {_fmt(st.q)}", file=sys.stderr)
            print(f"# qdot = {_fmt(st.qdot)}", file=sys.stderr)
            print(f"# active = {[int(i) for i in np.flatnonzero(st.active_set)]}", file=sys.stderr)
        raise
    s = result.summary
    print(f"# wrote {out_dir / out.trajectory_path} and {out_dir / out.events_path}")
    for key in ("model", "method", "step_size", "t_final", "steps", "impacts", "cumulative_W_loss", "max_drift", "min_gap", "wall_time"):
        value = s[key]
        print(f"{key} = {value!r}" if not isinstance(value, str) else f'{key} = "{value}"')
    return EXIT_OK


def _bundle(spec):
    return build_bundle(spec.M, spec.A, rank_tol=spec.rank_tol)


def cmd_impact(args) -> int:
    spec = load_problem(_path(args))
    bundle = _bundle(spec)
    prob = impact.ImpactProblem(
        M=spec.M, bundle=bundle, qdot_minus=spec.qdot_minus, e_global=spec.e, E=spec.E,
        i_u=spec.i_u, n_bilateral=spec.bilateral_rows,
    )
    rec = impact.resolve_impact(prob)
    c = rec.consistency
    if c is not None and not c.feasible and not args.allow_inconsistent:
        print(f"# refused: lambda_max(E Q E - Q) = {c.worst_eigenvalue:.17g} > tol {c.tol:.3g}", file=sys.stderr)
        print("# pass --allow-inconsistent to resolve it anyway", file=sys.stderr)
        impact.require_consistent(c)

    print("# impact resolved")
    print(f"#   qdot_plus = {_fmt(rec.qdot_plus)}")
    print(f"#   i_f       = {_fmt(rec.i_f)}")
    print(f"#   i_lambda  = {_fmt(rec.i_lambda)}")
    print(f"#   W_loss    = {rec.W_loss:.17g}")
    print(f"#   gamma     = {rec.gamma:.17g}")
    if rec.nonunique_multipliers:
        print("#   note: dependent impact rows, i_lambda is the minimum-norm choice")
    if c is not None:
        print(f"#   consistency: {'feasible' if c.feasible else 'INFEASIBLE'} (lambda_max = {c.worst_eigenvalue:.17g})")

    doc = spec.to_dict()
    doc["record"] = {
        "qdot_plus": rec.qdot_plus,
        "i_f": rec.i_f,
        "i_lambda": rec.i_lambda,
        "W_loss": rec.W_loss,
        "gamma": rec.gamma,
        "K_minus": rec.K_minus,
        "K_plus": rec.K_plus,
        "nonunique_multipliers": rec.nonunique_multipliers,
    }
    if c is not None:
        doc["consistency"] = _consistency_doc(c)
    print(dumps_toml(doc))
    return EXIT_OK


def _consistency_doc(c) -> dict:
    return {
        "feasible": c.feasible,
        "lambda_max": c.worst_eigenvalue,
        "lmi_min_eigenvalue": c.lmi_min_eigenvalue,
        "tol": c.tol,
        "Q": c.Q,
    }


def cmd_check(args) -> int:
    spec = load_problem(_path(args), require_restitution=True)
    bundle = _bundle(spec)
    E = spec.E
    if E is None:
        m = spec.A.shape[0]
        E = np.diag(np.concatenate([np.zeros(spec.bilateral_rows), np.full(m - spec.bilateral_rows, spec.e)]))
    c = impact.check_consistency(spec.M, bundle, spec.A, E)
    print(f"# verdict: {'feasible' if c.feasible else 'INFEASIBLE'}")
    print(f"#   lambda_max(E Q E - Q) = {c.worst_eigenvalue:.17g}  (tol {c.tol:.3g})")
    print(f"#   LMI minimum eigenvalue = {c.lmi_min_eigenvalue:.17g}")
    print("#   quadratic and Schur-complement tests agree")
    print(dumps_toml(_consistency_doc(c)))
    if not c.feasible:
        return InconsistentRestitutionError.exit_code
    return EXIT_OK


def cmd_verify(args) -> int:
    reports = run_suites(args.suite, seed=args.seed, count=args.count)
    for rep in reports:
        print(rep.format())
    ok = all(r.passed for r in reports)
    print(f"overall: {'PASS' if ok else 'FAIL'}")
    # a violated identity means the engine disagrees with itself
    return EXIT_OK if ok else InternalConsistencyError.exit_code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="projmech", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def with_file(p):
        p.add_argument("path", nargs="?", help="scenario or problem file (same as --config)")
        p.add_argument("--config", help="scenario or problem file")

    p = sub.add_parser("simulate", help="run a scenario")
    with_file(p)
    p.add_argument("--override", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--out", help="output directory (default: current directory)")
    p.add_argument("--allow-inconsistent", action="store_true", help="run even with energetically inconsistent restitution")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("impact", help="resolve a one-shot impact problem")
    with_file(p)
    p.add_argument("--allow-inconsistent", action="store_true", help="resolve an infeasible restitution matrix anyway")
    p.set_defaults(func=cmd_impact)

    p = sub.add_parser("check-restitution", help="certify a restitution matrix")
    with_file(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("verify", help="run the randomized identity suites")
    p.add_argument("suite", choices=(*SUITES, "all"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=100)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "count", 0) < 0:
        parser.error("--count must be nonnegative")
    try:
        return args.func(args)
    except _UsageError as exc:
        parser.error(str(exc))
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: cannot read {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_IO
    except ProjmechError as exc:
        kind = type(exc).__name__
        print(f"error [{kind}]: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
