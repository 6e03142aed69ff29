"""Deterministic synthetic 4D volumes for end-to-end testing.

The phantom is a smooth head-like ellipsoid (intensity about 600, on a
0 to 1000 raw-intensity scale) with a soft compactly-supported rim, a
handful of smooth internal blobs, one spherical cluster carrying a
sinusoidal time course, and temporal Gaussian noise confined to the
head. The noise field can be spatially smoothed (while staying
independent across frames) to mimic the spatial correlation of
physiological noise; voxel-wise variance is renormalized after
smoothing so noise_sigma keeps its meaning.

Everything is a pure function of the PhantomSpec, including the noise, so
ground-truth masks are exactly reproducible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, gaussian_filter1d

from . import rng as _rng
from .degrade import DegradationOp, add_noise, downsample
from .errors import ConfigError
from .volume import Grid3, Series4, Volume3

__all__ = [
    "PhantomSpec",
    "PhantomTruth",
    "generate",
    "make_lr_pair",
    "mask_to_rle",
    "mask_from_rle",
]

_HEAD_VALUE = 600.0
_STATIC_MAX = 1000.0
_RIM_INNER = 0.85  # normalized radius where the rim ramp starts
_RIM_OUTER = 1.15  # normalized radius where intensity reaches zero


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry, activation, and noise knobs for one phantom."""

    size: tuple[int, int, int] = (32, 32, 32)
    timepoints: int = 20
    spacing: tuple[float, float, float] = (1.5, 1.5, 1.5)
    n_ellipsoids: int = 6
    activation_center_mm: tuple[float, float, float] | None = None
    activation_radius_mm: float = 4.5
    activation_taper_mm: float = 0.0
    activation_amplitude: float = 100.0
    activation_period: float = 8.0
    noise_sigma: float = 25.0
    noise_smooth_vox: float = 2.0
    seed: int = 0

    def __post_init__(self) -> None:
        size = tuple(int(n) for n in self.size)
        if len(size) != 3 or any(n < 8 for n in size):
            raise ConfigError(f"phantom size must be three dims >= 8, got {self.size!r}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(not (math.isfinite(s) and s > 0) for s in spacing):
            raise ConfigError(f"phantom spacing must be three positive values, got {self.spacing!r}")
        if int(self.timepoints) < 1:
            raise ConfigError(f"timepoints must be >= 1, got {self.timepoints!r}")
        if int(self.n_ellipsoids) < 0:
            raise ConfigError(f"n_ellipsoids must be >= 0, got {self.n_ellipsoids!r}")
        if not (self.activation_radius_mm > 0.0):
            raise ConfigError(f"activation radius must be > 0 mm, got {self.activation_radius_mm!r}")
        if not (math.isfinite(self.activation_taper_mm) and self.activation_taper_mm >= 0.0):
            raise ConfigError(f"activation taper must be >= 0 mm, got {self.activation_taper_mm!r}")
        if not (self.activation_period > 1.0):
            raise ConfigError(f"activation period must exceed 1 frame, got {self.activation_period!r}")
        if self.noise_sigma < 0.0 or self.noise_smooth_vox < 0.0:
            raise ConfigError("noise_sigma and noise_smooth_vox must be >= 0")
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "timepoints", int(self.timepoints))
        object.__setattr__(self, "n_ellipsoids", int(self.n_ellipsoids))
        object.__setattr__(self, "seed", int(self.seed))


@dataclass(frozen=True)
class PhantomTruth:
    """Generator-known ground truth for downstream assertions."""

    head_mask: Volume3
    activation_mask: Volume3
    activation_center_mm: tuple[float, float, float]
    activation_amplitude: float
    activation_period: float
    clip_high: float


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _coord_fields(grid: Grid3) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    zs = (np.arange(grid.nz, dtype=np.float64) + 0.5) * grid.sz
    ys = (np.arange(grid.ny, dtype=np.float64) + 0.5) * grid.sy
    xs = (np.arange(grid.nx, dtype=np.float64) + 0.5) * grid.sx
    return (
        zs[:, None, None],
        ys[None, :, None],
        xs[None, None, :],
    )


def _ellipsoid_rho(grid: Grid3, center_mm, semi_axes_mm) -> np.ndarray:
    """Normalized radius field: 0 at center, 1 on the ellipsoid surface."""
    zf, yf, xf = _coord_fields(grid)
    return np.sqrt(
        ((xf - center_mm[0]) / semi_axes_mm[0]) ** 2
        + ((yf - center_mm[1]) / semi_axes_mm[1]) ** 2
        + ((zf - center_mm[2]) / semi_axes_mm[2]) ** 2
    )


def _rim_profile(rho: np.ndarray, inner: float, outer: float) -> np.ndarray:
    """1 inside `inner`, smooth fall to exactly 0 at `outer` and beyond."""
    return 1.0 - _smoothstep((rho - inner) / (outer - inner))


def _noise_field(shape, seed: int, stream: int, smooth_vox: float) -> np.ndarray:
    w = _rng.normal(shape, seed, stream)
    if smooth_vox <= 0.0:
        return w
    sm = gaussian_filter(w, smooth_vox, mode="constant")
    # restore unit voxelwise variance after smoothing
    probe = np.zeros(8 * int(math.ceil(4 * smooth_vox)) + 9)
    probe[probe.size // 2] = 1.0
    taps = gaussian_filter1d(probe, smooth_vox)
    l2_1d = float(np.sum(taps * taps))
    return sm / math.sqrt(l2_1d ** 3)


def generate(spec: PhantomSpec) -> tuple[Series4, PhantomTruth]:
    """Deterministic 4D phantom plus its ground-truth masks."""
    nx, ny, nz = spec.size
    sx, sy, sz = spec.spacing
    grid = Grid3(nx=nx, ny=ny, nz=nz, sx=sx, sy=sy, sz=sz)
    extent = (nx * sx, ny * sy, nz * sz)
    head_c = (extent[0] / 2.0, extent[1] / 2.0, extent[2] / 2.0)
    head_a = (0.40 * extent[0], 0.40 * extent[1], 0.40 * extent[2])
    rho = _ellipsoid_rho(grid, head_c, head_a)
    static = _HEAD_VALUE * _rim_profile(rho, _RIM_INNER, _RIM_OUTER)

    g = _rng.substream(spec.seed, _rng.STREAM_PHANTOM_STRUCTURE)
    for _ in range(spec.n_ellipsoids):
        frac = g.uniform(-0.45, 0.45, size=3)
        center = tuple(head_c[i] + frac[i] * head_a[i] for i in range(3))
        axes = tuple(g.uniform(3.0, 7.5, size=3))
        sign = 1.0 if g.random() < 0.5 else -1.0
        amp = sign * g.uniform(80.0, 150.0)
        rho_b = _ellipsoid_rho(grid, center, axes)
        static = static + amp * _rim_profile(rho_b, 0.6, 1.0)
    static = np.clip(static, 0.0, _STATIC_MAX)

    head_mask = rho <= 1.0
    if spec.activation_center_mm is None:
        act_c = (
            head_c[0] + 0.35 * head_a[0],
            head_c[1] + 0.20 * head_a[1],
            head_c[2],
        )
    else:
        act_c = tuple(float(c) for c in spec.activation_center_mm)
    zf, yf, xf = _coord_fields(grid)
    dist2 = (xf - act_c[0]) ** 2 + (yf - act_c[1]) ** 2 + (zf - act_c[2]) ** 2
    act_sphere = dist2 <= spec.activation_radius_mm ** 2
    if not act_sphere.any():
        raise ConfigError("activation sphere contains no voxel center")
    # full amplitude inside the nominal radius, smooth fall to zero over
    # the taper width (taper 0 keeps the classic hard-edged sphere)
    if spec.activation_taper_mm > 0.0:
        act_weight = _rim_profile(
            np.sqrt(dist2),
            spec.activation_radius_mm,
            spec.activation_radius_mm + spec.activation_taper_mm,
        )
    else:
        act_weight = act_sphere.astype(np.float64)
    if not bool(np.all(head_mask[act_weight > 0.0])):
        raise ConfigError("activation cluster must lie inside the head ellipsoid")
    act_mask = act_sphere & head_mask

    clip_high = _STATIC_MAX + 5.0 * spec.noise_sigma
    frames = []
    for t in range(spec.timepoints):
        frame = static.copy()
        if spec.activation_amplitude != 0.0:
            signal = spec.activation_amplitude * math.sin(2.0 * math.pi * t / spec.activation_period)
            if spec.activation_taper_mm > 0.0:
                frame += signal * act_weight
            else:
                frame[act_mask] += signal
        if spec.noise_sigma > 0.0:
            noise = _noise_field(frame.shape, spec.seed,
                                 _rng.STREAM_PHANTOM_NOISE + t, spec.noise_smooth_vox)
            frame[head_mask] += spec.noise_sigma * noise[head_mask]
        frame = np.clip(frame, 0.0, clip_high)
        frames.append(Volume3(grid, frame.astype(np.float32)))
    series = Series4(grid, tuple(frames))
    truth = PhantomTruth(
        head_mask=Volume3(grid, head_mask.astype(np.float32)),
        activation_mask=Volume3(grid, act_mask.astype(np.float32)),
        activation_center_mm=act_c,
        activation_amplitude=float(spec.activation_amplitude),
        activation_period=float(spec.activation_period),
        clip_high=float(clip_high),
    )
    return series, truth


def make_lr_pair(hr_series: Series4, op: DegradationOp) -> tuple[Series4, Series4]:
    """Degrade every frame: downsample, then add observation noise.

    Noise draws use a per-frame stream offset so frames stay
    independent yet the whole pair is reproducible from op.seed.
    """
    lr_frames = []
    for idx, frame in enumerate(hr_series.frames):
        low = downsample(frame, op)
        if op.noise_variance > 0.0:
            low = add_noise(low, op.noise_variance, op.seed, _rng.STREAM_NOISE + idx)
        lr_frames.append(low)
    lr = Series4(lr_frames[0].grid, tuple(lr_frames), hr_series.tr_seconds)
    return lr, hr_series


def mask_to_rle(mask: Volume3) -> dict:
    """Run-length encode a binary mask (flat C order, starts with zeros)."""
    flat = (mask.data.ravel() != 0).astype(np.int8)
    edges = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], edges, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0] == 1:
        runs = [0] + runs
    return {"shape": list(mask.data.shape), "runs": runs}


def mask_from_rle(obj: dict, grid: Grid3) -> Volume3:
    """Inverse of :func:`mask_to_rle` onto the given grid."""
    shape = tuple(obj["shape"])
    if shape != grid.shape_zyx:
        raise ConfigError(f"rle shape {shape} does not match grid {grid.shape_zyx}")
    flat = np.zeros(int(np.prod(shape)), dtype=np.float32)
    pos = 0
    value = 0
    for run in obj["runs"]:
        if value:
            flat[pos:pos + run] = 1.0
        pos += run
        value ^= 1
    if pos != flat.size:
        raise ConfigError("rle runs do not cover the mask exactly")
    return Volume3(grid, flat.reshape(shape))
