"""Image-quality and binary-map agreement metrics.

PSNR and a dense uniform-window 3D SSIM for reconstruction quality,
plus Jaccard / accuracy / false-discovery-rate for thresholded maps.
All functions are pure and operate on whole volumes; the data range R
for PSNR/SSIM comes from a policy argument and is always reported back.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import ConfigError, GridError
from .volume import Series4, Volume3

__all__ = [
    "PSNR_CAP_DB",
    "QualityReport",
    "resolve_range",
    "psnr",
    "ssim3d",
    "jaccard",
    "acc_fdr",
    "evaluate_series",
]

PSNR_CAP_DB = 200.0
_SSIM_WINDOW = 7


@dataclass(frozen=True)
class QualityReport:
    """PSNR/SSIM pair with the data range both metrics used."""

    psnr_db: float
    ssim: float
    data_range: float


def resolve_range(gt: np.ndarray, range_policy) -> float:
    """Data range R per policy: 'minmax' (default), 'max', or a number.

    A degenerate zero range falls back to 1.0 so constant ground truth
    does not poison the logarithm; the returned value is what was used.
    """
    if isinstance(range_policy, str):
        if range_policy == "minmax":
            r = float(np.max(gt)) - float(np.min(gt))
        elif range_policy == "max":
            r = float(np.max(gt))
        else:
            raise ConfigError(f"unknown range policy {range_policy!r}; use 'minmax', 'max', or a number")
    else:
        r = float(range_policy)
        if not (math.isfinite(r) and r > 0.0):
            raise ConfigError(f"explicit data range must be finite and > 0, got {range_policy!r}")
    if r <= 0.0:
        return 1.0
    return r


def _paired(gt: Volume3, est: Volume3) -> tuple[np.ndarray, np.ndarray]:
    if gt.grid != est.grid:
        raise GridError(f"volume grids differ: {gt.grid} vs {est.grid}")
    return gt.data, est.data


def psnr(gt: Volume3, est: Volume3, range_policy="minmax") -> float:
    """Peak signal-to-noise ratio in dB, capped at 200 for exact matches."""
    a, b = _paired(gt, est)
    r = resolve_range(a, range_policy)
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    value = 10.0 * math.log10((r * r) / mse)
    return min(value, PSNR_CAP_DB)


def ssim3d(
    gt: Volume3,
    est: Volume3,
    window: int = _SSIM_WINDOW,
    k1: float = 0.01,
    k2: float = 0.03,
    range_policy="minmax",
) -> float:
    """Mean structural similarity over all full window^3 neighborhoods.

    Uniform (unweighted) windows; variances and covariance are
    population moments over each window. Only windows that fit entirely
    inside the volume contribute.
    """
    a, b = _paired(gt, est)
    if window < 2 or window % 2 == 0:
        raise ConfigError(f"ssim window must be odd and >= 3, got {window}")
    if any(dim < window for dim in a.shape):
        raise GridError(f"volume dims {a.shape} are smaller than the ssim window {window}")
    r = resolve_range(a, range_policy)
    c1 = (k1 * r) ** 2
    c2 = (k2 * r) ** 2
    x = a.astype(np.float64)
    y = b.astype(np.float64)

    def win_mean(v: np.ndarray) -> np.ndarray:
        # interior crop keeps exactly the full-window positions
        h = window // 2
        return uniform_filter(v, size=window, mode="constant")[h:-h, h:-h, h:-h]

    mu_x = win_mean(x)
    mu_y = win_mean(y)
    var_x = win_mean(x * x) - mu_x * mu_x
    var_y = win_mean(y * y) - mu_y * mu_y
    cov = win_mean(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def _as_binary(v: Volume3, name: str) -> np.ndarray:
    data = v.data
    if not np.all((data == 0) | (data == 1)):
        raise ValueError(f"{name} must contain only 0 and 1 values")
    return data != 0


def jaccard(a: Volume3, b: Volume3) -> float:
    """|a AND b| / |a OR b|; two empty masks count as identical (1.0)."""
    if a.grid != b.grid:
        raise GridError(f"mask grids differ: {a.grid} vs {b.grid}")
    ma = _as_binary(a, "mask a")
    mb = _as_binary(b, "mask b")
    union = int(np.count_nonzero(ma | mb))
    if union == 0:
        return 1.0
    return float(np.count_nonzero(ma & mb) / union)


def acc_fdr(gt_map: Volume3, est_map: Volume3) -> tuple[float, float]:
    """Accuracy (TP+TN)/N and false discovery rate FP/(FP+TP).

    FDR is defined as 0 when the estimate has no positives at all.
    """
    if gt_map.grid != est_map.grid:
        raise GridError(f"map grids differ: {gt_map.grid} vs {est_map.grid}")
    g = _as_binary(gt_map, "gt map")
    e = _as_binary(est_map, "est map")
    tp = int(np.count_nonzero(g & e))
    fp = int(np.count_nonzero(~g & e))
    tn = int(np.count_nonzero(~g & ~e))
    n = g.size
    accuracy = (tp + tn) / n
    fdr = 0.0 if (tp + fp) == 0 else fp / (tp + fp)
    return accuracy, fdr


def evaluate_series(gt: Series4, est: Series4, range_policy="minmax") -> dict:
    """Per-frame PSNR/SSIM with mean and standard deviation.

    Frames are paired by index; the two series must have equal length
    and share grids. The standard deviation is the population one.
    """
    if gt.t != est.t:
        raise GridError(f"series lengths differ: {gt.t} vs {est.t}")
    frames = []
    for i in range(gt.t):
        r = resolve_range(gt.frames[i].data, range_policy)
        frames.append({
            "frame": i,
            "psnr_db": psnr(gt.frames[i], est.frames[i], range_policy),
            "ssim": ssim3d(gt.frames[i], est.frames[i], range_policy=range_policy),
            "data_range": r,
        })
    p = np.array([f["psnr_db"] for f in frames], dtype=np.float64)
    s = np.array([f["ssim"] for f in frames], dtype=np.float64)
    return {
        "frames": frames,
        "psnr_mean_db": float(p.mean()),
        "psnr_sd_db": float(p.std()),
        "ssim_mean": float(s.mean()),
        "ssim_sd": float(s.std()),
    }
