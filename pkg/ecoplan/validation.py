"""Validation helpers for scenario files and overrides."""

from __future__ import annotations

from collections.abc import Sequence
import math
from typing import Any, Final

EVENT_SPEED_LIMIT: Final = "speed_limit"
EVENT_STOP_WALL: Final = "stop_wall"
VALID_EVENT_TYPES: Final = frozenset({EVENT_SPEED_LIMIT, EVENT_STOP_WALL})

_UNIT_SUFFIXES: Final = ("_m", "_ms", "_ms2", "_kg", "_w", "_n", "_s", "_m2", "_rad", "_kgm3")


def is_finite_number(value: Any) -> bool:
    """Return True for real numbers that are neither nan nor infinite."""
    if isinstance(value, bool) or not isinstance(value, int | float):
        return False
    return math.isfinite(value)


def is_strictly_increasing(values: Sequence[float]) -> bool:
    """Whether each value exceeds its predecessor."""
    return all(b > a for a, b in zip(values, values[1:], strict=False))


def has_distinct_waypoints(points: Sequence[Sequence[float]]) -> bool:
    """A route needs two or more points and no zero-length legs."""
    if len(points) < 2:
        return False
    return all(
        (b[0] - a[0]) ** 2 + (b[1] - a[1]) ** 2 > 0.0 for a, b in zip(points, points[1:], strict=False)
    )


def strip_unit_suffix(name: str) -> str:
    """Key name without a trailing unit suffix."""
    for suffix in sorted(_UNIT_SUFFIXES, key=len, reverse=True):
        if name.endswith(suffix) and len(name) > len(suffix):
            return name[: -len(suffix)]
    return name


def parse_assignment(text: str) -> tuple[str, str]:
    """Split ``key=value``; the key must be non-empty."""
    key, sep, value = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ValueError(f"override must look like key=value, got {text!r}")
    return key, value.strip()
