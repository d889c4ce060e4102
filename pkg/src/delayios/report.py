"""Canonical JSON report envelopes.

Keys are sorted and floats are written with 17 significant digits, so the
same envelope always serialises to the same bytes. Wall-clock timing is
kept in a sidecar file next to the report to keep that property.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError

TOOL = "delayios"
SCHEMA_VERSION = 1


def _plain(obj: Any, path: str = "$"):
    if isinstance(obj, dict):
        return {str(k): _plain(v, f"{path}.{k}") for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v, f"{path}[{i}]") for i, v in enumerate(obj)]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist(), path)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            raise ConfigError(f"non-finite value {v} at {path}", path)
        return v
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_json"):
        return _plain(obj.to_json(), path)
    raise ConfigError(f"cannot serialise {type(obj).__name__} at {path}", path)


def _emit(v) -> str:
    if isinstance(v, dict):
        items = sorted(v.items())
        return "{" + ",".join(json.dumps(k) + ":" + _emit(x) for k, x in items) + "}"
    if isinstance(v, list):
        return "[" + ",".join(_emit(x) for x in v) + "]"
    if isinstance(v, bool) or v is None:
        return json.dumps(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        s = format(v, ".17g")
        return s if any(c in s for c in ".en") else s + ".0"
    return json.dumps(v, ensure_ascii=False)


def canonical_dumps(obj) -> str:
    """Serialise ``obj``; raises ConfigError on NaN/inf or unknown types."""
    return _emit(_plain(obj)) + "\n"


def make_envelope(command: str, config: dict, result: dict, exit_code: int) -> dict:
    from . import __version__

    return {
        "tool": TOOL,
        "version": __version__,
        "schema": SCHEMA_VERSION,
        "command": command,
        "config": config,
        "result": result,
        "exit_code": int(exit_code),
    }


def emit_report(envelope: dict, path, timing: dict | None = None) -> Path:
    """Write the canonical envelope; validation happens before anything is written."""
    text = canonical_dumps(envelope)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    if timing is not None:
        side = path.with_name(path.stem + ".timing.json")
        side.write_text(canonical_dumps(timing), encoding="utf-8")
    return path


def load_report(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
