"""Canonical JSON text: fixed key order, shortest round-trip numbers, no
insignificant whitespace. Dicts are emitted in insertion order, so callers
build them in schema order; integral floats collapse to integer form so that
parse/serialize cycles are byte-stable."""

from __future__ import annotations

import hashlib
import json
import math
from typing import Any

# integers above 2**53 stop round-tripping through float; keep int form below
_MAX_INT_FORM = 2**53


def format_number(x: float | int) -> str:
    if isinstance(x, bool):  # pragma: no cover - callers handle bools first
        raise TypeError("bool is not a number here")
    if not math.isfinite(x):
        raise ValueError(f"non-finite number {x!r} has no canonical form")
    f = float(x)
    if f == int(f) and abs(f) < _MAX_INT_FORM:
        return str(int(f))
    return repr(f)


def dumps(obj: Any) -> str:
    out: list[str] = []
    _emit(obj, out)
    return "".join(out)


def _emit(obj: Any, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, (int, float)):
        out.append(format_number(obj))
    elif isinstance(obj, dict):
        out.append("{")
        first = True
        for k, v in obj.items():
            if not isinstance(k, str):
                raise TypeError(f"non-string key {k!r}")
            if not first:
                out.append(",")
            first = False
            out.append(json.dumps(k, ensure_ascii=False))
            out.append(":")
            _emit(v, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            _emit(v, out)
        out.append("]")
    else:
        raise TypeError(f"{type(obj).__name__} is not JSON-serializable")


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_obj(obj: Any) -> str:
    return sha256_text(dumps(obj))
