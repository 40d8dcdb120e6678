"""Deterministic JSON reports and atomic file output."""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__

REPORT_SCHEMA_VERSION = 1


def plain(obj: Any) -> Any:
    """Recursively convert numpy values to JSON types; non-finite floats become
    the strings ``"inf"``, ``"-inf"`` and ``"nan"``."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return obj


def make_report(command: str, scenario, stages: dict, checks: list) -> dict:
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "tool": {"name": "idg", "version": __version__},
        "command": command,
        "seed": scenario.seed if scenario is not None else None,
        "scenario": scenario.to_dict() if scenario is not None else None,
        "stages": stages,
        "checks": [c.to_dict() for c in checks],
        "ok": all(c.ok for c in checks),
    }


def dumps(report: dict) -> str:
    return json.dumps(plain(report), indent=2, sort_keys=True, allow_nan=False) + "\n"


def loads(text: str) -> dict:
    d = json.loads(text)
    if d.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise ValueError(f"unsupported report schema version {d.get('schema_version')!r}")
    return d


def write_atomic(path, text: str) -> Path:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    umask = os.umask(0)
    os.umask(umask)
    try:
        os.chmod(tmp, 0o666 & ~umask)
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path
