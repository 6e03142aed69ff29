"""Volumetric degradation operator: Gaussian blur, decimation, noise.

The forward operator maps a high-resolution volume to a low-resolution
observation by separable Gaussian blurring followed by trilinear
decimation on a spacing-scaled grid. The adjoint is exact with respect
to the plain voxel dot product, which makes the pair usable inside
gradient computations. Additive Gaussian noise is a separate step and
is never part of the operator itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from . import rng as _rng
from ._resample import AXIS_OF, apply_taps, apply_taps_adjoint, down_coords, linear_taps
from .errors import ConfigError, GridError
from .volume import Grid3, Volume3

__all__ = ["DegradationOp", "blur", "blur_adjoint", "downsample", "downsample_adjoint", "add_noise"]

_MAX_FACTOR = 4.0


def _default_sigma(factor: float) -> tuple[float, float, float]:
    s = 0.5 * (factor - 1.0)
    return (s, s, s)


@dataclass(frozen=True)
class DegradationOp:
    """Blur-then-decimate forward model with per-axis Gaussian widths.

    ``factor`` is the linear resolution ratio (low-res spacing over
    high-res spacing) and must lie in [1, 4]. ``blur_sigma_vox`` is in
    high-res voxel units per axis; the default couples it to the factor
    so a unit factor degenerates to the identity.
    """

    factor: float
    blur_sigma_vox: tuple[float, float, float] = field(default=None)  # type: ignore[assignment]
    noise_variance: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        f = float(self.factor)
        if not math.isfinite(f) or f < 1.0 or f > _MAX_FACTOR:
            raise ConfigError(f"degradation factor must be in [1, {_MAX_FACTOR}], got {self.factor!r}")
        object.__setattr__(self, "factor", f)
        sig = self.blur_sigma_vox
        if sig is None:
            sig = _default_sigma(f)
        sig = tuple(float(s) for s in sig)
        if len(sig) != 3 or any(not math.isfinite(s) or s < 0.0 for s in sig):
            raise ConfigError(f"blur_sigma_vox must be three finite values >= 0, got {self.blur_sigma_vox!r}")
        object.__setattr__(self, "blur_sigma_vox", sig)
        nv = float(self.noise_variance)
        if not math.isfinite(nv) or nv < 0.0:
            raise ConfigError(f"noise_variance must be finite and >= 0, got {self.noise_variance!r}")
        object.__setattr__(self, "noise_variance", nv)
        object.__setattr__(self, "seed", int(self.seed))


def _gauss_kernel(sigma: float) -> np.ndarray | None:
    """Symmetric Gaussian taps with half-width ceil(3*sigma); None if identity."""
    if sigma <= 0.0:
        return None
    r = int(math.ceil(3.0 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k


def _blur_norms(shape_zyx: tuple[int, int, int], sigmas: tuple[float, float, float]) -> np.ndarray | None:
    """Per-voxel sum of in-bounds kernel weights (renormalization field)."""
    norm = None
    for name, sigma in zip(("x", "y", "z"), sigmas):
        k = _gauss_kernel(sigma)
        if k is None:
            continue
        ax = AXIS_OF[name]
        n = shape_zyx[ax]
        line = correlate1d(np.ones(n, dtype=np.float64), k, mode="constant", cval=0.0)
        shape = [1, 1, 1]
        shape[ax] = n
        line = line.reshape(shape)
        norm = line if norm is None else norm * line
    return norm


def _blur_array(data: np.ndarray, sigmas: tuple[float, float, float]) -> np.ndarray:
    out = np.asarray(data, dtype=np.float64)
    did = False
    for name, sigma in zip(("x", "y", "z"), sigmas):
        k = _gauss_kernel(sigma)
        if k is None:
            continue
        out = correlate1d(out, k, axis=AXIS_OF[name], mode="constant", cval=0.0)
        did = True
    if not did:
        return out.copy() if out is data else out
    norm = _blur_norms(data.shape, sigmas)
    out /= norm
    return out


def _blur_adjoint_array(data: np.ndarray, sigmas: tuple[float, float, float]) -> np.ndarray:
    # Forward blur is M = N^-1 K with K symmetric (zero-padded correlation),
    # so the adjoint is K N^-1: divide first, then correlate.
    out = np.asarray(data, dtype=np.float64)
    norm = _blur_norms(data.shape, sigmas)
    if norm is None:
        return out.copy() if out is data else out
    out = out / norm
    for name, sigma in zip(("x", "y", "z"), sigmas):
        k = _gauss_kernel(sigma)
        if k is None:
            continue
        out = correlate1d(out, k, axis=AXIS_OF[name], mode="constant", cval=0.0)
    return out


def _sigma_triple(sigma_vox) -> tuple[float, float, float]:
    if isinstance(sigma_vox, DegradationOp):
        return sigma_vox.blur_sigma_vox
    if np.isscalar(sigma_vox):
        sigma_vox = (sigma_vox,) * 3
    sig = tuple(float(s) for s in sigma_vox)
    if len(sig) != 3 or any(not math.isfinite(s) or s < 0.0 for s in sig):
        raise ConfigError(f"sigma_vox must be three finite values >= 0, got {sigma_vox!r}")
    return sig


def blur(volume: Volume3, sigma_vox) -> Volume3:
    """Separable Gaussian blur with edge renormalization; grid unchanged.

    ``sigma_vox`` is a per-axis (x, y, z) width in voxels, a scalar applied
    to all axes, or a :class:`DegradationOp` whose widths are used.
    """
    out = _blur_array(volume.data, _sigma_triple(sigma_vox))
    return Volume3(volume.grid, out.astype(np.float32))


def blur_adjoint(volume: Volume3, sigma_vox) -> Volume3:
    """Exact adjoint of :func:`blur` under the voxel dot product."""
    out = _blur_adjoint_array(volume.data, _sigma_triple(sigma_vox))
    return Volume3(volume.grid, out.astype(np.float32))


def _lr_dims(grid: Grid3, factor: float) -> tuple[int, int, int]:
    dims = tuple(int(math.floor(n / factor)) for n in grid.counts)
    if any(d < 2 for d in dims):
        raise GridError(f"downsampled dims {dims} from {grid.counts} at factor {factor} fall below 2")
    return dims  # type: ignore[return-value]


def _dec_taps(n_out: int, factor: float, n_in: int) -> tuple[np.ndarray, np.ndarray]:
    # Clamp keeps the rightmost sample interpolating when the HR extent
    # is slightly short of n_out*factor; forward and adjoint must build
    # taps identically or the dot-product pairing breaks.
    coords = np.clip(down_coords(n_out, factor), 0.0, n_in - 1.0)
    return linear_taps(coords, n_in)


def _decimate_array(data: np.ndarray, factor: float, out_dims: tuple[int, int, int]) -> np.ndarray:
    out = np.asarray(data, dtype=np.float64)
    for name in ("x", "y", "z"):
        ax = AXIS_OF[name]
        n_in = out.shape[ax]
        n_out = out_dims[{"x": 0, "y": 1, "z": 2}[name]]
        idx, wts = _dec_taps(n_out, factor, n_in)
        out = apply_taps(out, ax, idx, wts)
    return out


def _decimate_adjoint_array(data: np.ndarray, factor: float, hr_counts: tuple[int, int, int]) -> np.ndarray:
    out = np.asarray(data, dtype=np.float64)
    for name in ("x", "y", "z"):
        ax = AXIS_OF[name]
        n_out = out.shape[ax]
        n_in = hr_counts[{"x": 0, "y": 1, "z": 2}[name]]
        idx, wts = _dec_taps(n_out, factor, n_in)
        out = apply_taps_adjoint(out, ax, idx, wts, n_in)
    return out


def _lr_grid(grid: Grid3, factor: float, dims: tuple[int, int, int]) -> Grid3:
    return Grid3(
        nx=dims[0], ny=dims[1], nz=dims[2],
        sx=grid.sx * factor, sy=grid.sy * factor, sz=grid.sz * factor,
    )


def downsample(volume: Volume3, op: DegradationOp) -> Volume3:
    """Apply the full forward operator: blur, then trilinear decimation.

    Output dims are floor(n/factor) per axis; output spacing is input
    spacing times the factor. Sample i of the output reads the blurred
    input at continuous coordinate (i + 0.5)*factor - 0.5.
    """
    dims = _lr_dims(volume.grid, op.factor)
    return _downsample_to(volume, op, dims)


def _downsample_to(volume: Volume3, op: DegradationOp, out_dims: tuple[int, int, int]) -> Volume3:
    """Forward operator onto explicitly given low-res dims (loss plumbing)."""
    blurred = _blur_array(volume.data, op.blur_sigma_vox)
    dec = _decimate_array(blurred, op.factor, out_dims)
    return Volume3(_lr_grid(volume.grid, op.factor, out_dims), dec.astype(np.float32))


def downsample_adjoint(volume: Volume3, op: DegradationOp, hr_grid: Grid3) -> Volume3:
    """Exact adjoint of :func:`downsample` onto the given high-res grid.

    Satisfies <downsample(u), v> == <u, downsample_adjoint(v)> to
    floating-point accuracy for all u on ``hr_grid`` and v on the
    low-res grid.
    """
    expected = _lr_dims(hr_grid, op.factor)
    if volume.grid.counts != expected:
        raise GridError(
            f"adjoint input dims {volume.grid.counts} do not match the "
            f"downsample of {hr_grid.counts} at factor {op.factor} ({expected})"
        )
    spread = _decimate_adjoint_array(volume.data, op.factor, hr_grid.counts)
    out = _blur_adjoint_array(spread, op.blur_sigma_vox)
    return Volume3(hr_grid, out.astype(np.float32))


def add_noise(volume: Volume3, variance: float, seed: int, stream: int = _rng.STREAM_NOISE) -> Volume3:
    """Add i.i.d. Gaussian noise with the given variance; zero variance is a copy."""
    if not math.isfinite(variance) or variance < 0.0:
        raise ConfigError(f"noise variance must be finite and >= 0, got {variance!r}")
    if variance == 0.0:
        return Volume3(volume.grid, volume.data.copy())
    noise = _rng.normal(volume.data.shape, seed, stream) * math.sqrt(variance)
    return Volume3(volume.grid, (volume.data.astype(np.float64) + noise).astype(np.float32))
