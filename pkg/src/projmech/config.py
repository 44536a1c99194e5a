"""Scenario and impact-problem files (TOML), overrides and a minimal writer."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import tomli

from .errors import ConfigError, InconsistentRestitutionError
from .models import model_defaults

__all__ = [
    "IntegratorConfig",
    "ModelConfig",
    "OutputConfig",
    "ProblemSpec",
    "ScenarioConfig",
    "ToleranceConfig",
    "apply_overrides",
    "dumps_toml",
    "load_problem",
    "load_scenario",
    "parse_problem",
    "parse_scenario",
]

METHODS = ("rk4", "dopri5")


@dataclass
class ModelConfig:
    name: str
    params: dict = field(default_factory=dict)


@dataclass
class IntegratorConfig:
    step_size: float = 1e-3
    method: str = "rk4"
    t_end: float = 1.0
    rtol: float = 1e-9
    atol: float = 1e-12
    min_step: float = 1e-14


@dataclass
class ToleranceConfig:
    event_tol: float = 1e-10
    gap_tol: float = 1e-9
    drift_tol: float = 1e-10
    rank_tol: float | None = None
    act_tol: float = 1e-9
    vel_tol: float = 1e-9
    lambda_tol: float = 1e-9


@dataclass
class OutputConfig:
    trajectory_path: str = ""
    events_path: str = ""
    sample_stride: int = 1


@dataclass
class ScenarioConfig:
    model: ModelConfig
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    tolerances: ToleranceConfig = field(default_factory=ToleranceConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)
    allow_inconsistent: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["tolerances"]["rank_tol"] is None:
            del d["tolerances"]["rank_tol"]
        return d


_SECTIONS = {
    "integrator": IntegratorConfig,
    "tolerances": ToleranceConfig,
    "outputs": OutputConfig,
}


def _number(value, where, *, positive=False, nonneg=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(where, f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(where, "must be finite")
    if positive and value <= 0:
        raise ConfigError(where, "must be > 0")
    if nonneg and value < 0:
        raise ConfigError(where, "must be >= 0")
    return value


def _section(raw, name, cls):
    raw = raw.get(name, {})
    if not isinstance(raw, dict):
        raise ConfigError(name, "expected a table")
    known = cls.__dataclass_fields__
    for key in raw:
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown key")
    return cls(**raw)


def parse_scenario(raw: dict) -> ScenarioConfig:
    """Validate a scenario mapping, naming the first offending field."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a table")
    for key in raw:
        if key not in ("model", "allow_inconsistent", *_SECTIONS):
            raise ConfigError(key, "unknown key")

    m = raw.get("model")
    if not isinstance(m, dict):
        raise ConfigError("model", "missing [model] table")
    for key in m:
        if key not in ("name", "params"):
            raise ConfigError(f"model.{key}", "unknown key")
    if not isinstance(m.get("name"), str):
        raise ConfigError("model.name", "missing model name")
    params = m.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("model.params", "expected a table")
    defaults = model_defaults(m["name"])
    for key in params:
        if key not in defaults:
            raise ConfigError(f"model.params.{key}", f"unknown parameter for model {m['name']!r}")

    cfg = ScenarioConfig(
        model=ModelConfig(m["name"], dict(params)),
        integrator=_section(raw, "integrator", IntegratorConfig),
        tolerances=_section(raw, "tolerances", ToleranceConfig),
        outputs=_section(raw, "outputs", OutputConfig),
        allow_inconsistent=raw.get("allow_inconsistent", False),
    )
    if not isinstance(cfg.allow_inconsistent, bool):
        raise ConfigError("allow_inconsistent", "expected true or false")

    it = cfg.integrator
    it.step_size = _number(it.step_size, "integrator.step_size", positive=True)
    it.t_end = _number(it.t_end, "integrator.t_end", nonneg=True)
    it.rtol = _number(it.rtol, "integrator.rtol", positive=True)
    it.atol = _number(it.atol, "integrator.atol", positive=True)
    it.min_step = _number(it.min_step, "integrator.min_step", positive=True)
    if it.method not in METHODS:
        raise ConfigError("integrator.method", f"must be one of {METHODS}")

    tol = cfg.tolerances
    for name in ("event_tol", "gap_tol", "drift_tol", "act_tol", "vel_tol", "lambda_tol"):
        setattr(tol, name, _number(getattr(tol, name), f"tolerances.{name}", positive=True))
    if tol.rank_tol is not None:
        tol.rank_tol = _number(tol.rank_tol, "tolerances.rank_tol", nonneg=True)

    out = cfg.outputs
    if isinstance(out.sample_stride, bool) or not isinstance(out.sample_stride, int) or out.sample_stride < 1:
        raise ConfigError("outputs.sample_stride", "must be an integer >= 1")
    for name in ("trajectory_path", "events_path"):
        if not isinstance(getattr(out, name), str):
            raise ConfigError(f"outputs.{name}", "expected a path string")

    _check_restitution(cfg)
    return cfg


def _check_restitution(cfg: ScenarioConfig):
    p = cfg.model.params
    where = "model.params"
    if "restitution" in p:
        e = _number(p["restitution"], f"{where}.restitution", nonneg=True)
        if e > 1.0 and not cfg.allow_inconsistent:
            raise InconsistentRestitutionError(
                f"{where}.restitution = {e} > 1 is refused: a global restitution coefficient above 1 "
                "breaks energetic consistency (post-impact kinetic energy would exceed pre-impact); "
                "pass --allow-inconsistent to run anyway"
            )
    if p.get("restitution_matrix") is not None:
        E = p["restitution_matrix"]
        if not isinstance(E, list):
            raise ConfigError(f"{where}.restitution_matrix", "expected the list of diagonal entries")
        for i, v in enumerate(E):
            _number(v, f"{where}.restitution_matrix[{i}]", nonneg=True)


def _parse_value(text: str):
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``dotted.key=value`` overrides; values use TOML literal syntax.

    The override must name a key the schema knows (model parameters are
    checked against the selected model's parameter list).
    """
    raw = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, text = item.split("=", 1)
        key = key.strip()
        parts = key.split(".")
        _check_override_key(raw, parts, key)
        node = raw
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(key, "does not name a table entry")
        node[parts[-1]] = _parse_value(text.strip())
    return raw


def _check_override_key(raw, parts, key):
    head = parts[0]
    if head == "allow_inconsistent" and len(parts) == 1:
        return
    if head in _SECTIONS and len(parts) == 2 and parts[1] in _SECTIONS[head].__dataclass_fields__:
        return
    if head == "model":
        if parts[1:] == ["name"]:
            return
        if len(parts) == 3 and parts[1] == "params":
            name = raw.get("model", {}).get("name")
            if parts[2] in model_defaults(name):
                return
    raise ConfigError(key, "override does not reference an existing config key")


def load_scenario(path, overrides=()) -> ScenarioConfig:
    """Read, override and validate a scenario file."""
    path = Path(path)
    with path.open("rb") as fh:
        try:
            raw = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(str(path), f"not valid TOML: {exc}") from None
    return parse_scenario(apply_overrides(raw, overrides))


# ---------------------------------------------------------------------------
# impact problem files


@dataclass
class ProblemSpec:
    """One-shot impact problem as read from a problem file."""

    M: np.ndarray
    A: np.ndarray
    qdot_minus: np.ndarray
    e: float | None = None
    E: np.ndarray | None = None
    i_u: np.ndarray | None = None
    bilateral_rows: int = 0
    rank_tol: float | None = None

    def to_dict(self) -> dict:
        d = {"M": self.M.tolist(), "A": self.A.tolist(), "qdot_minus": self.qdot_minus.tolist()}
        if self.e is not None:
            d["e"] = self.e
        if self.E is not None:
            d["E"] = self.E.tolist()
        if self.i_u is not None:
            d["i_u"] = self.i_u.tolist()
        d["bilateral_rows"] = self.bilateral_rows
        if self.rank_tol is not None:
            d["rank_tol"] = self.rank_tol
        return d


_PROBLEM_KEYS = {"M", "A", "qdot_minus", "e", "E", "i_u", "bilateral_rows", "rank_tol", "record", "consistency"}


def _matrix(value, where, shape=None):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(where, "expected a numeric matrix (list of rows)") from None
    if shape is not None:
        if arr.size == 0 and shape[0] == 0:
            return np.zeros(shape)
        if arr.shape != shape:
            raise ConfigError(where, f"expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(where, "non-finite entries")
    return arr


def parse_problem(raw: dict, require_restitution=True) -> ProblemSpec:
    for key in raw:
        if key not in _PROBLEM_KEYS:
            raise ConfigError(key, "unknown key")
    for key in ("M", "A", "qdot_minus"):
        if key not in raw:
            raise ConfigError(key, "missing")
    M = _matrix(raw["M"], "M")
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] == 0:
        raise ConfigError("M", f"must be a nonempty square matrix, got shape {M.shape}")
    n = M.shape[0]
    A = np.asarray(raw["A"], dtype=float)
    A = np.zeros((0, n)) if A.size == 0 else _matrix(raw["A"], "A")
    if A.ndim != 2 or A.shape[1] != n:
        raise ConfigError("A", f"must have {n} columns, got shape {A.shape}")
    m = A.shape[0]
    qd = _matrix(raw["qdot_minus"], "qdot_minus", (n,))
    i_u = _matrix(raw["i_u"], "i_u", (n,)) if "i_u" in raw else None
    e = E = None
    if "e" in raw and "E" in raw:
        raise ConfigError("E", "give either e or E, not both")
    if "e" in raw:
        e = _number(raw["e"], "e", nonneg=True)
    elif "E" in raw:
        E = _matrix(raw["E"], "E", (m, m))
    elif require_restitution:
        raise ConfigError("e", "missing restitution (e or E)")
    nb = raw.get("bilateral_rows", 0)
    if isinstance(nb, bool) or not isinstance(nb, int) or not 0 <= nb <= m:
        raise ConfigError("bilateral_rows", f"must be an integer in [0, {m}]")
    rank_tol = _number(raw["rank_tol"], "rank_tol", nonneg=True) if "rank_tol" in raw else None
    return ProblemSpec(M=M, A=A, qdot_minus=qd, e=e, E=E, i_u=i_u, bilateral_rows=nb, rank_tol=rank_tol)


def load_problem(path, require_restitution=True) -> ProblemSpec:
    path = Path(path)
    with path.open("rb") as fh:
        try:
            raw = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(str(path), f"not valid TOML: {exc}") from None
    return parse_problem(raw, require_restitution=require_restitution)


# ---------------------------------------------------------------------------
# writer


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    s = "%.17g" % x
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _fmt_float(float(v))
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, np.ndarray):
        v = v.tolist()
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt_value(x) for x in v) + "]"
    raise TypeError(f"cannot write {type(v).__name__} to TOML")


def dumps_toml(data: dict, _prefix="") -> str:
    """Serialise nested dicts of scalars/arrays; floats keep 17 significant digits."""
    lines, tables = [], []
    for key, value in data.items():
        if value is None:
            continue
        if isinstance(value, dict):
            tables.append((key, value))
        else:
            lines.append(f"{key} = {_fmt_value(value)}")
    out = "\n".join(lines)
    for key, value in tables:
        name = f"{_prefix}{key}"
        body = dumps_toml(value, _prefix=f"{name}.")
        out += ("\n\n" if out else "") + f"[{name}]" + ("\n" + body if body else "")
    return out
