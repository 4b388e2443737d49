"""Input validation helpers shared by the estimator layer and the CLI."""

from __future__ import annotations

import math

import numpy as np

from .norms import SpaceTimeTrace
from .spectral import Epsilon, Field, Grid

__all__ = ["check_field", "check_epsilon", "check_trace", "check_positive", "check_grid_compatible"]


def check_field(f, grid: Grid | None = None, finite: bool = True) -> Field:
    if not isinstance(f, Field):
        raise TypeError(f"expected a Field, got {type(f).__name__}")
    if grid is not None and f.grid != grid:
        raise ValueError(f"field lives on {f.grid}, expected {grid}")
    if finite and not np.all(np.isfinite(f.samples)):
        raise ValueError("field contains non-finite samples")
    return f


def check_epsilon(eps) -> int:
    return int(Epsilon.coerce(eps))


def check_trace(trace, grid: Grid | None = None) -> SpaceTimeTrace:
    if not isinstance(trace, SpaceTimeTrace):
        raise TypeError(f"expected a SpaceTimeTrace, got {type(trace).__name__}")
    if grid is not None and trace.grid != grid:
        raise ValueError("trace lives on a different grid")
    if not np.all(np.isfinite(trace.samples)):
        raise ValueError("trace contains non-finite samples")
    return trace


def check_positive(name: str, value, allow_zero: bool = False) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ValueError(f"{name} must be a number, got {value!r}") from None
    if not math.isfinite(v) or v < 0 or (v == 0 and not allow_zero):
        raise ValueError(f"{name} must be {'non-negative' if allow_zero else 'positive'}, got {value!r}")
    return v


def check_grid_compatible(grid: Grid, cube_side: float) -> None:
    for L in grid.half_length:
        ratio = 2 * L / cube_side
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError(f"box side {2 * L} is not an integer multiple of cube side {cube_side}")
