"""Flat ``key = value`` text files used for configs, sidecars, manifests and reports.

Values are JSON literals (numbers, booleans, quoted strings, lists); anything
that does not parse as JSON is kept as a bare string. Lines starting with
``#`` and blank lines are ignored. Key order is preserved on write so output
is diff-stable.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Mapping

import numpy as np


class KVFormatError(ValueError):
    """Raised for malformed key-value lines."""


def parse_kv(text: str, source: str = "<string>") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise KVFormatError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise KVFormatError(f"{source}:{lineno}: empty key")
        value = value.strip()
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def read_kv(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    return parse_kv(path.read_text(encoding="utf-8"), source=str(path))


def format_value(value: Any, sig: int | None = None) -> str:
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, np.ndarray):
        value = value.tolist()
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            return json.dumps(str(value))
        return f"{value:.{sig}g}" if sig else repr(float(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(format_value(v, sig) for v in value) + "]"
    return json.dumps(str(value))


def dump_kv(data: Mapping[str, Any], header: str | None = None, sig: int | None = None) -> str:
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    for key, value in data.items():
        lines.append(f"{key} = {format_value(value, sig)}")
    return "\n".join(lines) + "\n"


def write_kv(path: str | Path, data: Mapping[str, Any], header: str | None = None,
             sig: int | None = None) -> None:
    Path(path).write_text(dump_kv(data, header, sig), encoding="utf-8", newline="\n")
