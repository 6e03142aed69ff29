"""Smoothed isotropic total variation for 3D volumes.

Forward differences along each axis (zero at each trailing boundary)
feed a per-voxel magnitude sqrt(dx^2 + dy^2 + dz^2 + eps). The value
subtracts sqrt(eps) per voxel so constant volumes score exactly zero,
and the gradient is the exact derivative of that smoothed value.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, GridError
from .volume import Volume3

__all__ = ["tv_value", "tv_value_grad", "tv", "tv_gradient"]

DEFAULT_EPS = 1.0e-8


def _check_dims(x: np.ndarray) -> np.ndarray:
    if x.ndim != 3 or min(x.shape) < 2:
        raise GridError(f"tv needs a 3D array with dims >= 2, got shape {x.shape}")
    return x


def _forward_diffs(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    dz = np.zeros_like(x)
    dy = np.zeros_like(x)
    dx = np.zeros_like(x)
    dz[:-1, :, :] = x[1:, :, :] - x[:-1, :, :]
    dy[:, :-1, :] = x[:, 1:, :] - x[:, :-1, :]
    dx[:, :, :-1] = x[:, :, 1:] - x[:, :, :-1]
    return dz, dy, dx


def _diff_adjoint(q: np.ndarray, axis: int) -> np.ndarray:
    # Adjoint of the forward difference: (D^T q)[i] = q[i-1] - q[i].
    out = -q
    to = [slice(None)] * 3
    src = [slice(None)] * 3
    to[axis] = slice(1, None)
    src[axis] = slice(0, -1)
    out[tuple(to)] += q[tuple(src)]
    return out


def _check_eps(eps: float, need_positive: bool) -> float:
    e = float(eps)
    if not math.isfinite(e) or e < 0.0 or (need_positive and e == 0.0):
        kind = "> 0" if need_positive else ">= 0"
        raise ConfigError(f"tv eps must be finite and {kind}, got {eps!r}")
    return e


def tv_value(x: np.ndarray, eps: float = DEFAULT_EPS) -> float:
    """Smoothed isotropic TV; exactly zero for constant input."""
    e = _check_eps(eps, need_positive=False)
    x = _check_dims(np.asarray(x, dtype=np.float64))
    dz, dy, dx = _forward_diffs(x)
    m = np.sqrt(dz * dz + dy * dy + dx * dx + e)
    return float(np.sum(m - math.sqrt(e)))


def tv_value_grad(x: np.ndarray, eps: float = DEFAULT_EPS) -> tuple[float, np.ndarray]:
    """Value and exact gradient of the smoothed TV; eps must be positive."""
    e = _check_eps(eps, need_positive=True)
    x = _check_dims(np.asarray(x, dtype=np.float64))
    dz, dy, dx = _forward_diffs(x)
    m = np.sqrt(dz * dz + dy * dy + dx * dx + e)
    value = float(np.sum(m - math.sqrt(e)))
    grad = _diff_adjoint(dz / m, 0)
    grad += _diff_adjoint(dy / m, 1)
    grad += _diff_adjoint(dx / m, 2)
    return value, grad


def tv(volume: Volume3, eps: float = DEFAULT_EPS) -> float:
    """Smoothed isotropic TV of a volume's samples (spacing-free)."""
    return tv_value(volume.data, eps)


def tv_gradient(volume: Volume3, eps: float = DEFAULT_EPS) -> Volume3:
    """Exact gradient of :func:`tv` with respect to the volume's samples."""
    _, grad = tv_value_grad(volume.data, eps)
    return Volume3(volume.grid, grad)
