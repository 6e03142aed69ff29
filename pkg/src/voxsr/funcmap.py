"""Functional-map analysis for preprocessed 4D series.

Provides an intensity automask, seed-based Pearson correlation maps,
inclusive thresholding, and binary-map comparison. The input is assumed
already preprocessed; the only temporal cleanup offered is an optional
linear-plus-quadratic detrend. Seed geometry works in millimetres with
voxel centers at (index + 0.5) * spacing along each axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import label

from .errors import AnalysisError, GridError
from .metrics import acc_fdr, jaccard
from .volume import Grid3, Series4, Volume3

__all__ = [
    "SeedSpec",
    "FuncMap",
    "automask",
    "sphere_mask",
    "seed_correlation",
    "threshold_map",
    "compare_maps",
]

_FOREGROUND_FLOOR_FRACTION = 0.01  # of the temporal-mean maximum


@dataclass(frozen=True)
class SeedSpec:
    """Spherical seed: center in mm and radius in mm (default 3)."""

    center: tuple[float, float, float]
    radius_mm: float = 3.0

    def __post_init__(self) -> None:
        center = tuple(float(c) for c in self.center)
        if len(center) != 3 or any(not math.isfinite(c) for c in center):
            raise AnalysisError(f"seed center must be three finite mm coordinates, got {self.center!r}")
        if not (math.isfinite(self.radius_mm) and self.radius_mm > 0.0):
            raise AnalysisError(f"seed radius must be > 0 mm, got {self.radius_mm!r}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius_mm", float(self.radius_mm))


@dataclass(frozen=True)
class FuncMap:
    """Per-voxel correlation against a seed course, zero outside the mask."""

    grid: Grid3
    r_values: np.ndarray
    mask: Volume3
    threshold: float = 0.5

    def __post_init__(self) -> None:
        r = np.asarray(self.r_values, dtype=np.float32)
        if r.shape != self.grid.shape_zyx:
            raise GridError(f"r_values shape {r.shape} does not match grid {self.grid.shape_zyx}")
        if self.mask.grid != self.grid:
            raise GridError("mask grid does not match the map grid")
        r.setflags(write=False)
        object.__setattr__(self, "r_values", r)


def automask(series: Series4) -> Volume3:
    """Binary head mask from intensity: clip-level threshold, largest component.

    The temporal mean is thresholded at half the median of its
    foreground voxels (values above a small fraction of the maximum,
    which keeps numerical dust out of the median), then only the
    largest 6-connected component survives.
    """
    mean_vol = series.as_array().astype(np.float64).mean(axis=0)
    peak = float(mean_vol.max())
    if peak <= 0.0:
        raise AnalysisError("automask found no positive intensity; the series is empty")
    candidates = mean_vol > _FOREGROUND_FLOOR_FRACTION * peak
    if not candidates.any():
        raise AnalysisError("automask found no foreground voxels above the intensity floor")
    clip_level = 0.5 * float(np.median(mean_vol[candidates]))
    rough = mean_vol >= clip_level
    if not rough.any():
        raise AnalysisError("automask threshold removed every voxel")
    labels, count = label(rough)  # default structure = 6-connectivity
    if count == 0:
        raise AnalysisError("automask found no connected component")
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    keep = int(sizes.argmax())
    mask = (labels == keep).astype(np.float32)
    return Volume3(series.grid, mask)


def sphere_mask(grid: Grid3, seed: SeedSpec) -> np.ndarray:
    """Boolean (z, y, x) field of voxels whose centers fall in the seed sphere."""
    zs = (np.arange(grid.nz, dtype=np.float64) + 0.5) * grid.sz
    ys = (np.arange(grid.ny, dtype=np.float64) + 0.5) * grid.sy
    xs = (np.arange(grid.nx, dtype=np.float64) + 0.5) * grid.sx
    dz = (zs - seed.center[2])[:, None, None] ** 2
    dy = (ys - seed.center[1])[None, :, None] ** 2
    dx = (xs - seed.center[0])[None, None, :] ** 2
    return dz + dy + dx <= seed.radius_mm ** 2


def _detrend(data: np.ndarray) -> np.ndarray:
    """Remove per-voxel linear and quadratic temporal trends."""
    t = data.shape[0]
    tau = np.linspace(-1.0, 1.0, t)
    design = np.stack([np.ones(t), tau, tau * tau], axis=1)
    flat = data.reshape(t, -1)
    coef, *_ = np.linalg.lstsq(design, flat, rcond=None)
    resid = flat - design @ coef
    # keep the temporal mean so intensity-based masking still works
    resid += flat.mean(axis=0, keepdims=True)
    return resid.reshape(data.shape)


def seed_correlation(
    series: Series4,
    seed: SeedSpec,
    mask: Volume3 | None = None,
    threshold: float = 0.5,
    detrend: bool = False,
) -> FuncMap:
    """Pearson correlation of every voxel against the seed-sphere mean course.

    The seed course averages all voxels whose centers lie within the
    sphere. Voxels outside the mask or with zero temporal variance get
    r = 0. Needs at least 3 timepoints and a non-degenerate seed course.
    """
    if series.t < 3:
        raise AnalysisError(f"seed correlation needs at least 3 timepoints, got {series.t}")
    if mask is None:
        mask = automask(series)
    if mask.grid != series.grid:
        raise GridError("mask grid does not match the series grid")
    sphere = sphere_mask(series.grid, seed)
    if not sphere.any():
        raise AnalysisError("seed sphere contains no voxel center on this grid")
    if not (sphere & (mask.data != 0)).any():
        raise AnalysisError("seed sphere does not intersect the analysis mask")
    data = series.as_array().astype(np.float64)
    if detrend:
        data = _detrend(data)
    course = data[:, sphere].mean(axis=1)
    course_c = course - course.mean()
    seed_energy = float(np.sum(course_c * course_c))
    if seed_energy == 0.0:
        raise AnalysisError("seed course has zero variance")
    centered = data - data.mean(axis=0, keepdims=True)
    num = np.tensordot(course_c, centered, axes=(0, 0))
    energy = np.sum(centered * centered, axis=0)
    den = np.sqrt(energy * seed_energy)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), 0.0)
    r = np.clip(r, -1.0, 1.0)
    r[mask.data == 0] = 0.0
    return FuncMap(series.grid, r.astype(np.float32), mask, float(threshold))


def threshold_map(fmap: FuncMap, r_min: float | None = None) -> Volume3:
    """Binary map: 1 where r >= r_min (inclusive) and inside the mask."""
    if r_min is None:
        r_min = fmap.threshold
    hot = (fmap.r_values >= float(r_min)) & (fmap.mask.data != 0)
    return Volume3(fmap.grid, hot.astype(np.float32))


def compare_maps(gt_map: Volume3, est_map: Volume3) -> tuple[float, float, float]:
    """(accuracy, fdr, jaccard) of a binary map against a reference map."""
    accuracy, fdr = acc_fdr(gt_map, est_map)
    return accuracy, fdr, jaccard(gt_map, est_map)
