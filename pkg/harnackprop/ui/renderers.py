"""Plain-text records for the ``.txt`` artifacts."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from harnackprop.utils.tables import format_value


def render_record(title: str, fields: Sequence[tuple[str, object]], precision: int = 12) -> list[str]:
    width = max((len(key) for key, _ in fields), default=0)
    lines = [f"# {title}"]
    for key, value in fields:
        lines.append(f"{key.ljust(width)} = {render_value(value, precision)}")
    return lines


def render_value(value: object, precision: int = 12) -> str:
    if isinstance(value, np.ndarray):
        value = value.tolist()
    if isinstance(value, (list, tuple)):
        return "(" + ", ".join(render_value(v, precision) for v in value) + ")"
    if isinstance(value, np.generic):
        value = value.item()
    return format_value(value, precision)


def render_flag(passed: bool) -> str:
    return "PASS" if passed else "FAIL"
