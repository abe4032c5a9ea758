"""Deterministic JSON/CSV emission.

All artifact files must be byte-identical across repeated runs with the same
inputs, so floats are always written with 17 significant digits (lossless for
IEEE doubles) and dict key order is preserved as constructed.
"""

from __future__ import annotations

import math
from typing import Any

SCHEMA_VERSION = 1


def format_float(value: float) -> str:
    v = float(value)
    if math.isnan(v) or math.isinf(v):
        raise ValueError(f"non-finite value cannot be serialized: {value!r}")
    return format(v, ".17g")


def _escape(s: str) -> str:
    out = []
    for ch in s:
        if ch == '"':
            out.append('\\"')
        elif ch == "\\":
            out.append("\\\\")
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    return "".join(out)


def to_json(obj: Any) -> str:
    """Serialize to JSON with 17-significant-digit floats and stable key order."""
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format_float(obj)
    if isinstance(obj, str):
        return f'"{_escape(obj)}"'
    if isinstance(obj, dict):
        items = ", ".join(f'"{_escape(str(k))}": {to_json(v)}' for k, v in obj.items())
        return "{" + items + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(to_json(v) for v in obj) + "]"
    # numpy scalars and arrays
    if hasattr(obj, "tolist"):
        return to_json(obj.tolist())
    raise TypeError(f"cannot serialize type {type(obj)!r}")


def csv_header_comment(seed: int) -> str:
    """Comment line embedding schema version and producing seed in CSV artifacts."""
    return f"# schema_version={SCHEMA_VERSION} seed={seed}"
