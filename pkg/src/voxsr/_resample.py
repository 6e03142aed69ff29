"""Separable 1D resampling machinery shared by degrade, interp and net.

Every resampling operator in voxsr is a tensor product of per-axis linear
maps. Each axis map is described by a tap table: for output index ``o``,
``taps`` source indices ``idx[:, o]`` with weights ``wts[:, o]``. Applying a
table is a gather along the axis; the exact adjoint is the corresponding
scatter-add. Keeping both sides on one table is what makes the operator /
adjoint pairs satisfy the dot-product identity to float tolerance.

Coordinate conventions (align-corners-false, shared low corner):
  downsample:  src = (o + 0.5) * factor - 0.5
  upsample:    src = (o + 0.5) / factor - 0.5, clamped to [0, n_in - 1]
"""

from __future__ import annotations

import math

import numpy as np


def down_coords(n_out: int, factor: float) -> np.ndarray:
    return (np.arange(n_out, dtype=np.float64) + 0.5) * factor - 0.5


def up_coords(n_out: int, factor: float, n_in: int) -> np.ndarray:
    x = (np.arange(n_out, dtype=np.float64) + 0.5) / factor - 0.5
    return np.clip(x, 0.0, n_in - 1.0)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def linear_taps(coords: np.ndarray, n_in: int):
    """Two-tap linear interpolation table at the given source coordinates."""
    x = np.clip(coords, 0.0, n_in - 1.0)
    i0 = np.floor(x).astype(np.int64)
    np.clip(i0, 0, max(n_in - 2, 0), out=i0)
    t = x - i0
    if n_in == 1:
        idx = np.zeros((2, len(x)), dtype=np.int64)
        wts = np.stack([np.ones_like(x), np.zeros_like(x)])
        return idx, wts
    idx = np.stack([i0, i0 + 1])
    wts = np.stack([1.0 - t, t])
    return idx, wts


def nearest_taps(coords: np.ndarray, n_in: int):
    """Single-tap nearest-neighbor table; ties round toward +inf."""
    i = np.floor(np.clip(coords, 0.0, n_in - 1.0) + 0.5).astype(np.int64)
    np.clip(i, 0, n_in - 1, out=i)
    return i[None, :], np.ones((1, len(coords)), dtype=np.float64)


def _mirror_index(i: np.ndarray, n: int) -> np.ndarray:
    """Whole-sample mirror fold into [0, n-1] (period 2n-2)."""
    if n == 1:
        return np.zeros_like(i)
    period = 2 * (n - 1)
    i = np.mod(i, period)
    return np.where(i >= n, period - i, i)


def bspline3_taps(coords: np.ndarray, n_in: int):
    """Four-tap cubic B-spline table with mirror-folded indices."""
    x = np.clip(coords, 0.0, n_in - 1.0)
    base = np.floor(x).astype(np.int64)
    np.clip(base, 0, max(n_in - 1, 0), out=base)
    t = x - base
    w0 = (1.0 - t) ** 3 / 6.0
    w1 = (4.0 - 6.0 * t * t + 3.0 * t ** 3) / 6.0
    w2 = (1.0 + 3.0 * t + 3.0 * t * t - 3.0 * t ** 3) / 6.0
    w3 = t ** 3 / 6.0
    idx = np.stack([_mirror_index(base + k, n_in) for k in (-1, 0, 1, 2)])
    wts = np.stack([w0, w1, w2, w3])
    return idx, wts


def apply_taps(arr: np.ndarray, axis: int, idx: np.ndarray,
               wts: np.ndarray) -> np.ndarray:
    """Gather: resample ``arr`` along ``axis`` through a tap table."""
    a = np.moveaxis(arr, axis, 0)
    w = wts.astype(arr.dtype)
    shape = (idx.shape[1],) + a.shape[1:]
    out = np.zeros(shape, dtype=arr.dtype)
    bcast = (slice(None),) + (None,) * (a.ndim - 1)
    for t in range(idx.shape[0]):
        out += w[t][bcast] * a[idx[t]]
    return np.moveaxis(out, 0, axis)


def apply_taps_adjoint(arr: np.ndarray, axis: int, idx: np.ndarray,
                       wts: np.ndarray, n_in: int) -> np.ndarray:
    """Scatter-add: exact transpose of :func:`apply_taps`."""
    a = np.moveaxis(arr, axis, 0)
    w = wts.astype(arr.dtype)
    out = np.zeros((n_in,) + a.shape[1:], dtype=arr.dtype)
    bcast = (slice(None),) + (None,) * (a.ndim - 1)
    for t in range(idx.shape[0]):
        np.add.at(out, idx[t], w[t][bcast] * a)
    return np.moveaxis(out, 0, axis)


# Axis order of (nz, ny, nx) arrays: x is the last axis.
AXIS_OF = {"x": 2, "y": 1, "z": 0}


def bspline3_prefilter(arr: np.ndarray) -> np.ndarray:
    """Exact cubic B-spline prefilter along all three axes, mirror boundary.

    Causal/anticausal recursive filtering with pole sqrt(3) - 2 and overall
    gain 6 per axis, so that evaluating the B-spline at the original sample
    positions reproduces the samples.
    """
    c = arr.astype(np.float64, copy=True)
    for axis in range(arr.ndim):
        c = _prefilter_axis(c, axis)
    return c


def _prefilter_axis(c: np.ndarray, axis: int) -> np.ndarray:
    z = math.sqrt(3.0) - 2.0
    a = np.moveaxis(c, axis, 0)  # view; in-place edits land in c
    n = a.shape[0]
    if n == 1:
        return c
    a *= 6.0

    # Causal init: mirror-extension sum, truncated where |z|^k < 1e-14.
    horizon = min(n, int(math.ceil(math.log(1e-14) / math.log(abs(z)))))
    if horizon < n:
        zk = z
        s = a[0].copy()
        for k in range(1, horizon):
            s += zk * a[k]
            zk *= z
    else:
        # Exact closed form for short lines (full mirror period).
        zk = z
        z2n = z ** (n - 1)
        s = a[0] + z2n * a[n - 1]
        z2n = z2n * z2n / z
        for k in range(1, n - 1):
            s += (zk + z2n) * a[k]
            zk *= z
            z2n /= z
        s = s / (1.0 - z ** (2 * n - 2))
    a[0] = s
    for k in range(1, n):
        a[k] += z * a[k - 1]

    # Anticausal pass, mirror init.
    a[n - 1] = (z / (z * z - 1.0)) * (z * a[n - 2] + a[n - 1])
    for k in range(n - 2, -1, -1):
        a[k] = z * (a[k + 1] - a[k])
    return c
