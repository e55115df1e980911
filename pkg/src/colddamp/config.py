"""Flat dotted-key configuration files.

One ``key = value`` per line; ``#`` starts a comment. Values are numbers,
arithmetic expressions in ``pi`` (``4*pi``), booleans, bare strings or
bracketed lists (``[0, pi/2, pi]``). Mode parameters use 1-based indices:
``modes.1.omega = 1.0``.
"""
from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

from .model import CavitySpec, FeedbackSpec, MechanicalMode, Regime, SystemSpec


class ConfigError(ValueError):
    """Invalid configuration; carries the offending line when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# section -> field -> kind
_MODE_FIELDS = {"omega": "float", "gamma": "float", "nbar": "float", "G": "float", "g_cd": "float"}
SCHEMA: Dict[str, Dict[str, str]] = {
    "cavity": {"kappa": "float", "eta": "float"},
    "feedback": {"omega_fb": "float", "tau": "float", "regime": "str"},
    "steady": {"method": "str", "optical_noise": "bool"},
    "quadrature": {"rtol": "float", "model": "str"},
    "spectrum": {"omega_min": "float", "omega_max": "float", "points": "int",
                 "tau": "list", "model": "str", "coordinates": "str"},
    "simulate": {"dt": "float", "t_end": "float", "n_traj": "int", "seed": "int",
                 "burn_in": "float", "record_stride": "int", "interpolate": "bool",
                 "cavity_noise": "bool"},
    "scan": {"method": "str", "tau_min": "float", "tau_max": "float", "tau_points": "int",
             "tau": "list", "spacing": "list", "spacing_min": "float", "spacing_max": "float",
             "spacing_points": "int", "scale_nbar": "bool", "optical_noise": "bool"},
    "optimize": {"method": "str", "tau_min": "float", "tau_max": "float",
                 "objective": "str", "points": "int"},
}

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}


def _eval_number(node):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        return float(node.value)
    if isinstance(node, ast.Name) and node.id == "pi":
        return math.pi
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _eval_number(node.operand)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval_number(node.left), _eval_number(node.right))
    raise ValueError("not a numeric expression")


def parse_value(text: str) -> Any:
    """Bool, number, list of numbers, or the stripped string."""
    t = text.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        tree = ast.parse(t, mode="eval").body
    except SyntaxError:
        return t
    if isinstance(tree, (ast.List, ast.Tuple)):
        return [_eval_number(e) for e in tree.elts]
    try:
        return _eval_number(tree)
    except (ValueError, ZeroDivisionError):
        return t


def _coerce(kind: str, value, key: str, line: int):
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, float):
            raise ConfigError(f"{key} expects a number, got {value!r}", line)
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, float) or value != int(value):
            raise ConfigError(f"{key} expects an integer, got {value!r}", line)
        return int(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{key} expects true/false, got {value!r}", line)
        return value
    if kind == "list":
        if isinstance(value, float):
            return [value]
        if not isinstance(value, list):
            raise ConfigError(f"{key} expects a list of numbers, got {value!r}", line)
        return value
    if not isinstance(value, str):
        raise ConfigError(f"{key} expects a string, got {value!r}", line)
    return value


@dataclass
class RunConfig:
    spec: SystemSpec
    options: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    raw: Dict[str, Any] = field(default_factory=dict)

    def get(self, section: str, key: str, default=None):
        return self.options.get(section, {}).get(key, default)

    def resolved(self) -> Dict[str, Any]:
        """Flat dictionary of the resolved configuration for metadata."""
        out = {}
        for j, m in enumerate(self.spec.modes, start=1):
            for f in _MODE_FIELDS:
                out[f"modes.{j}.{f}"] = getattr(m, f)
        out["cavity.kappa"] = self.spec.cavity.kappa
        out["cavity.eta"] = self.spec.cavity.eta
        out["feedback.omega_fb"] = self.spec.feedback.omega_fb
        out["feedback.tau"] = self.spec.feedback.tau
        out["feedback.regime"] = self.spec.feedback.regime.value
        for sec, vals in sorted(self.options.items()):
            for k, v in sorted(vals.items()):
                out[f"{sec}.{k}"] = v
        return out


def parse_text(text: str) -> RunConfig:
    entries: Dict[str, Tuple[Any, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", lineno)
        if key in entries:
            raise ConfigError(f"duplicate key {key!r} (first on line {entries[key][1]})", lineno)
        entries[key] = (parse_value(value), lineno)

    modes: Dict[int, Dict[str, float]] = {}
    options: Dict[str, Dict[str, Any]] = {}
    for key, (value, lineno) in entries.items():
        parts = key.split(".")
        if parts[0] == "modes":
            if len(parts) != 3 or not parts[1].isdigit() or int(parts[1]) < 1:
                raise ConfigError(f"mode keys look like modes.<index>.<field>, got {key!r}", lineno)
            if parts[2] not in _MODE_FIELDS:
                raise ConfigError(f"unknown key {key!r}", lineno)
            modes.setdefault(int(parts[1]), {})[parts[2]] = _coerce("float", value, key, lineno)
            continue
        if len(parts) != 2 or parts[0] not in SCHEMA or parts[1] not in SCHEMA[parts[0]]:
            raise ConfigError(f"unknown key {key!r}", lineno)
        options.setdefault(parts[0], {})[parts[1]] = _coerce(SCHEMA[parts[0]][parts[1]],
                                                              value, key, lineno)

    if not modes:
        raise ConfigError("no modes defined (expected modes.1.omega = ...)")
    idx = sorted(modes)
    if idx != list(range(1, len(idx) + 1)):
        raise ConfigError(f"mode indices must be 1..N without gaps, got {idx}")
    mech = []
    for i in idx:
        fields = modes[i]
        missing = [f for f in ("omega", "gamma", "nbar") if f not in fields]
        if missing:
            raise ConfigError(f"mode {i} is missing {', '.join(missing)}")
        try:
            mech.append(MechanicalMode(omega=fields["omega"], gamma=fields["gamma"],
                                       nbar=fields["nbar"], G=fields.get("G", 0.0),
                                       g_cd=fields.get("g_cd", 0.0)))
        except ValueError as exc:
            raise ConfigError(f"mode {i}: {exc}") from None
    cav = options.pop("cavity", {})
    fb = options.pop("feedback", {})
    if "kappa" not in cav:
        raise ConfigError("cavity.kappa is required")
    if "omega_fb" not in fb:
        raise ConfigError("feedback.omega_fb is required")
    try:
        spec = SystemSpec(
            modes=tuple(mech),
            cavity=CavitySpec(kappa=cav["kappa"], eta=cav.get("eta", 1.0)),
            feedback=FeedbackSpec(omega_fb=fb["omega_fb"], tau=fb.get("tau", 0.0),
                                  regime=Regime.parse(fb.get("regime", "sfflc"))))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(spec=spec, options=options,
                     raw={k: v for k, (v, _) in entries.items()})


def load(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_text(fh.read())


def grid_from(cfg: RunConfig, section: str, name: str, default_points: int = 101):
    """Explicit list ``<name>`` or linspace from ``<name>_min/_max/_points``."""
    explicit = cfg.get(section, name)
    if explicit is not None:
        return np.asarray(explicit, dtype=float)
    lo = cfg.get(section, f"{name}_min")
    hi = cfg.get(section, f"{name}_max")
    if lo is None and hi is None:
        return None
    if lo is None or hi is None:
        raise ConfigError(f"{section}.{name}_min and {section}.{name}_max must both be set")
    n = cfg.get(section, f"{name}_points", default_points)
    if n < 1 or (n > 1 and not hi > lo):
        raise ConfigError(f"{section}.{name} grid is empty or has zero width")
    return np.linspace(lo, hi, n)
