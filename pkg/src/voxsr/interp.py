"""Baseline volumetric upsampling: nearest, trilinear, cubic B-spline.

Output sample i along an axis reads the input at continuous coordinate
(i + 0.5)/factor - 0.5, clamped to the valid range, so input and output
grids share the same physical field of view under the half-voxel-center
convention. The cubic path prefilters with the exact recursive B-spline
inverse so that interpolation reproduces the input samples.
"""
from __future__ import annotations

import math

import numpy as np

from ._resample import (
    AXIS_OF,
    apply_taps,
    bspline3_prefilter,
    bspline3_taps,
    linear_taps,
    nearest_taps,
    round_half_up,
    up_coords,
)
from .errors import ConfigError, GridError
from .volume import Grid3, Volume3

__all__ = ["METHODS", "scaled_dims", "upsample", "upsample_array"]

METHODS = ("nearest", "trilinear", "bspline3")
_MAX_FACTOR = 4.0


def _check_factor(factor: float, strict: bool = False) -> float:
    f = float(factor)
    lo_ok = (f > 1.0) if strict else (f >= 1.0)
    if not math.isfinite(f) or not lo_ok or f > _MAX_FACTOR:
        bound = "(1" if strict else "[1"
        raise ConfigError(f"upsampling factor must be in {bound}, {_MAX_FACTOR}], got {factor!r}")
    return f


def scaled_dims(counts: tuple[int, int, int], factor: float) -> tuple[int, int, int]:
    """Per-axis output count round-half-up(n * factor)."""
    f = _check_factor(factor)
    dims = tuple(round_half_up(n * f) for n in counts)
    if any(d < 1 for d in dims):
        raise GridError(f"scaled dims {dims} from {counts} at factor {factor} are empty")
    return dims  # type: ignore[return-value]


def _taps_for(method: str, coords: np.ndarray, n_in: int):
    if method == "trilinear":
        return linear_taps(coords, n_in)
    if method == "nearest":
        return nearest_taps(coords, n_in)
    if method == "bspline3":
        return bspline3_taps(coords, n_in)
    raise ConfigError(f"unknown interpolation method {method!r}; expected one of {METHODS}")


def upsample_array(
    data: np.ndarray,
    factor: float,
    out_dims: tuple[int, int, int],
    method: str = "trilinear",
) -> np.ndarray:
    """Upsample a (z, y, x) array onto the given output dims; float64 result."""
    f = _check_factor(factor)
    if method not in METHODS:
        raise ConfigError(f"unknown interpolation method {method!r}; expected one of {METHODS}")
    out = np.asarray(data, dtype=np.float64)
    if method == "bspline3":
        out = bspline3_prefilter(out)
    for name in ("x", "y", "z"):
        ax = AXIS_OF[name]
        n_in = out.shape[ax]
        n_out = out_dims[{"x": 0, "y": 1, "z": 2}[name]]
        coords = up_coords(n_out, f, n_in)
        idx, wts = _taps_for(method, coords, n_in)
        out = apply_taps(out, ax, idx, wts)
    return out


def upsample(volume: Volume3, factor: float, method: str = "trilinear") -> Volume3:
    """Upsample onto a grid with counts round-half-up(n * factor) per axis.

    Output spacing is input spacing divided by the factor. The factor must
    be strictly greater than 1; the array-level helper accepts 1 as well.
    """
    f = _check_factor(factor, strict=True)
    dims = scaled_dims(volume.grid.counts, f)
    out = upsample_array(volume.data, f, dims, method)
    g = volume.grid
    grid = Grid3(nx=dims[0], ny=dims[1], nz=dims[2], sx=g.sx / f, sy=g.sy / f, sz=g.sz / f)
    return Volume3(grid, out.astype(np.float32))
