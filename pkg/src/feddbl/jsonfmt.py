"""Deterministic JSON rendering with fixed 6-decimal floats.

json.dumps cannot control float formatting, so reports are rendered by a
small recursive writer. Output is byte-stable for equal inputs, which the
report reproducibility contract relies on.
"""

from __future__ import annotations

import json
import math


def _render(obj, digits: int) -> str:
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"cannot render non-finite float {obj!r}")
        return f"{obj:.{digits}f}"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        items = (f"{json.dumps(str(k))}: {_render(v, digits)}" for k, v in obj.items())
        return "{" + ", ".join(items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_render(v, digits) for v in obj) + "]"
    raise TypeError(f"cannot render {type(obj).__name__} as JSON")


def dumps_fixed(obj, digits: int = 6) -> str:
    """JSON text with every float printed as a fixed-point decimal."""
    return _render(obj, digits)
