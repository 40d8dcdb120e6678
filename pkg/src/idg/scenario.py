"""Scenario files: JSON documents describing a game, its ground truth and
the settings of every workflow stage."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import jsonschema
import numpy as np

from .expr import ExprError, ExprMatrix, parse
from .game import Diagnostics, DomainBox, Dynamics, GameModel, ModelError, PlayerModel, validate

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


_num = {"type": "number"}
_vec = {"type": "array", "items": _num}
_str_list = {"type": "array", "items": {"type": "string"}, "minItems": 1}
_pos = {"type": "number", "exclusiveMinimum": 0}
_per_player = {"oneOf": [_pos, {"type": "array", "items": _pos}]}

SCHEMA = {
    "type": "object",
    "required": ["schema_version", "name", "dynamics", "players", "domain", "demonstrations"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "seed": {"type": "integer"},
        "ground_truth_mode": {"enum": ["parameter", "expression"]},
        "dynamics": {
            "type": "object",
            "required": ["n", "f", "G"],
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "f": _str_list,
                "G": {"type": "array", "minItems": 1, "items": {
                    "type": "array", "minItems": 1, "items": _str_list}},
            },
        },
        "players": {"type": "array", "minItems": 1, "items": {
            "type": "object",
            "required": ["phi", "psi"],
            "additionalProperties": False,
            "properties": {
                "phi": _str_list,
                "psi": _str_list,
                "alpha": _vec,
                "beta": _vec,
                "theta": _vec,
                "value": {"type": "string"},
                "cost_offset": {"type": ["string", "null"]},
            },
        }},
        "domain": {
            "type": "object",
            "required": ["lower", "upper", "step"],
            "additionalProperties": False,
            "properties": {"lower": _vec, "upper": _vec, "step": _vec},
        },
        "demonstrations": {
            "type": "object",
            "required": ["inits", "segment_T", "h", "dt"],
            "additionalProperties": False,
            "properties": {
                "inits": {"type": "array", "minItems": 1, "items": _vec},
                "segment_T": _pos,
                "h": _pos,
                "dt": _pos,
            },
        },
        "offline": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rtol": _pos,
                "split_tol": _pos,
                "w": {"type": ["array", "null"], "items": {"type": ["array", "null"], "items": _num}},
                "w_range": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                "w_points": {"type": "integer", "minimum": 2},
                "pd_ball": {"type": "number", "minimum": 0},
            },
        },
        "forward": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"tol": _pos, "max_iter": {"type": "integer", "minimum": 1}},
        },
        "online": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tau": _per_player,
                "kappa": _per_player,
                "T": _pos,
                "threshold": _pos,
                "horizon": _pos,
                "integrator": {"enum": ["euler", "exact"]},
                "init_theta_bar": {"type": ["array", "null"]},
                "init_eta": {"type": ["array", "null"]},
                "trace_decimation": {"type": "integer", "minimum": 1},
                "discrepancy_tol": _pos,
                "membership_tol": _pos,
                "excitation": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "amplitude": _num,
                        "sines": {"type": "integer", "minimum": 1},
                        "f_min": _pos,
                        "f_max": _pos,
                        "enabled": {"type": "boolean"},
                    },
                },
            },
        },
    },
}

OFFLINE_DEFAULTS = {"rtol": 1e-8, "split_tol": 1e-9, "w": None, "w_range": [-10.0, 10.0],
                    "w_points": 2001, "pd_ball": 0.1}
FORWARD_DEFAULTS = {"tol": 1e-6, "max_iter": 100}
EXCITATION_DEFAULTS = {"amplitude": 3.0, "sines": 3, "f_min": 0.5, "f_max": 5.0, "enabled": True}
ONLINE_DEFAULTS = {"tau": 50.0, "kappa": 5.0, "T": 1.0, "threshold": 1e-3, "horizon": 16.0,
                   "integrator": "euler", "init_theta_bar": None, "init_eta": None,
                   "trace_decimation": 10, "discrepancy_tol": 0.05,
                   "membership_tol": 1e-3}


@dataclass
class DemoPlan:
    inits: np.ndarray
    segment_T: float
    h: float
    dt: float


@dataclass
class Scenario:
    name: str
    seed: Optional[int]
    model: GameModel
    demos: DemoPlan
    offline: dict
    forward: dict
    online: dict
    raw: dict = field(repr=False)
    diagnostics: Optional[Diagnostics] = None

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def dumps(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True) + "\n"

    def per_player(self, value, what: str) -> list:
        N = self.model.N
        if isinstance(value, (int, float)):
            return [float(value)] * N
        if len(value) != N:
            raise ScenarioError(f"online.{what}", f"expected {N} entries, got {len(value)}")
        return [float(v) for v in value]


def _parse_at(src: str, path: str):
    try:
        return parse(src)
    except ExprError as exc:
        raise ScenarioError(path, str(exc)) from exc


def _schema_path(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def set_path(doc: dict, dotted: str, value: Any) -> None:
    """Assign ``value`` at a dotted path; integer parts index lists."""
    parts = dotted.split(".")
    cur = doc
    for k in parts[:-1]:
        cur = cur[int(k)] if isinstance(cur, list) else cur.setdefault(k, {})
    last = parts[-1]
    if isinstance(cur, list):
        cur[int(last)] = value
    else:
        cur[last] = value


def apply_overrides(doc: dict, overrides) -> dict:
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        if "=" not in item:
            raise ScenarioError(item, "override must look like key=value")
        key, text = item.split("=", 1)
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        set_path(doc, key.strip(), value)
    return doc


def from_dict(doc: dict) -> Scenario:
    doc = copy.deepcopy(doc)
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ScenarioError(_schema_path(e), e.message)

    dyn = doc["dynamics"]
    n = dyn["n"]
    if len(dyn["f"]) != n:
        raise ScenarioError("dynamics.f", f"expected {n} components, got {len(dyn['f'])}")
    f = ExprMatrix.column([_parse_at(s, f"dynamics.f.{k}") for k, s in enumerate(dyn["f"])])
    Gs = []
    for i, g in enumerate(dyn["G"]):
        if len(g) != n:
            raise ScenarioError(f"dynamics.G.{i}", f"expected {n} rows, got {len(g)}")
        widths = {len(r) for r in g}
        if len(widths) != 1:
            raise ScenarioError(f"dynamics.G.{i}", "rows differ in length")
        Gs.append(ExprMatrix([[_parse_at(s, f"dynamics.G.{i}.{a}.{b}") for b, s in enumerate(r)]
                              for a, r in enumerate(g)]))
    N = len(Gs)
    if len(doc["players"]) != N:
        raise ScenarioError("players", f"expected {N} players (one per G matrix), got {len(doc['players'])}")
    p_total = sum(g.shape[1] for g in Gs)
    mode = doc.get("ground_truth_mode", "parameter")
    players = []
    for i, pd in enumerate(doc["players"]):
        base = f"players.{i}"
        phi = tuple(_parse_at(s, f"{base}.phi.{k}") for k, s in enumerate(pd["phi"]))
        psi = tuple(_parse_at(s, f"{base}.psi.{k}") for k, s in enumerate(pd["psi"]))
        for key, want in (("alpha", p_total), ("beta", len(psi)), ("theta", len(phi))):
            if key in pd and len(pd[key]) != want:
                raise ScenarioError(f"{base}.{key}", f"expected length {want}, got {len(pd[key])}")
        if mode == "expression" and "value" not in pd:
            raise ScenarioError(f"{base}.value", "required in expression ground-truth mode")
        if mode == "parameter" and "theta" not in pd:
            raise ScenarioError(f"{base}.theta", "required in parameter ground-truth mode")
        arr = lambda k: np.asarray(pd[k], dtype=float) if k in pd else None  # noqa: E731
        players.append(PlayerModel(
            phi=phi, psi=psi, alpha=arr("alpha"), beta=arr("beta"), theta=arr("theta"),
            value=_parse_at(pd["value"], f"{base}.value") if "value" in pd else None,
            cost_offset=(_parse_at(pd["cost_offset"], f"{base}.cost_offset")
                         if pd.get("cost_offset") else None),
        ))
    dom = doc["domain"]
    for key in ("lower", "upper", "step"):
        if len(dom[key]) != n:
            raise ScenarioError(f"domain.{key}", f"expected {n} entries, got {len(dom[key])}")
    try:
        box = DomainBox(np.array(dom["lower"]), np.array(dom["upper"]), np.array(dom["step"]))
        model = GameModel(Dynamics(f, tuple(Gs)), tuple(players), box, mode)
    except ModelError as exc:
        raise ScenarioError("", str(exc)) from exc

    dp = doc["demonstrations"]
    inits = np.asarray(dp["inits"], dtype=float)
    if inits.ndim != 2 or inits.shape[1] != n:
        raise ScenarioError("demonstrations.inits", f"each initial state needs {n} entries")
    ratio = dp["dt"] / dp["h"]
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
        raise ScenarioError("demonstrations.dt", "must be an integer multiple of h")
    seg_ratio = dp["segment_T"] / dp["h"]
    if abs(seg_ratio - round(seg_ratio)) > 1e-9 * max(1.0, seg_ratio):
        raise ScenarioError("demonstrations.segment_T", "must be an integer multiple of h")

    offline = {**OFFLINE_DEFAULTS, **doc.get("offline", {})}
    if offline["w"] is not None and len(offline["w"]) != N:
        raise ScenarioError("offline.w", f"expected one entry per player ({N})")
    forward = {**FORWARD_DEFAULTS, **doc.get("forward", {})}
    online = {**ONLINE_DEFAULTS, **doc.get("online", {})}
    online["excitation"] = {**EXCITATION_DEFAULTS, **doc.get("online", {}).get("excitation", {})}
    ex = online["excitation"]
    nyquist = 0.5 / dp["h"]
    if not (0 < ex["f_min"] <= ex["f_max"] < nyquist):
        raise ScenarioError("online.excitation", f"frequency range must lie in (0, {nyquist}) Hz")
    if "online" in doc and ex["enabled"] and "seed" not in doc:
        raise ScenarioError("seed", "a seed is required for scenarios with excitation")

    sc = Scenario(
        name=doc["name"], seed=doc.get("seed"), model=model,
        demos=DemoPlan(inits, float(dp["segment_T"]), float(dp["h"]), float(dp["dt"])),
        offline=offline, forward=forward, online=online, raw=doc,
    )
    for key in ("tau", "kappa"):
        sc.per_player(online[key], key)
    sc.diagnostics = validate(model, offline["pd_ball"])
    return sc


def load_scenario(path, overrides=None, seed: Optional[int] = None) -> Scenario:
    """Load a scenario file; a bare bundled name such as ``"errorfree"`` also works."""
    path = Path(path)
    if not path.exists() and str(path) in BUNDLED:
        path = bundled_path(str(path))
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(str(path), f"invalid JSON: {exc}") from exc
    doc = apply_overrides(doc, overrides)
    if seed is not None:
        doc["seed"] = seed
    return from_dict(doc)


BUNDLED = ("errorfree", "value_approx", "cost_approx")


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("idg") / "scenarios" / f"{name}.json"))
