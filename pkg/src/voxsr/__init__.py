"""voxsr: self-supervised volumetric super-resolution toolkit.

Recovers high-resolution 3D volumes from low-resolution observations
alone: a small dense-residual CNN is trained so that degrading its
output reproduces the observed data, with an optional total-variation
penalty. Includes the degradation operator and its exact adjoint,
baseline interpolators, image-quality metrics, seed-correlation
functional maps, and a deterministic 4D phantom generator.
"""
from ._version import __version__
from .degrade import DegradationOp, add_noise, blur, blur_adjoint, downsample, downsample_adjoint
from .errors import (
    AnalysisError,
    ConfigError,
    DivergenceError,
    FormatError,
    GridError,
    NonFiniteError,
    StateError,
    VoxsrError,
)
from .funcmap import FuncMap, SeedSpec, automask, compare_maps, seed_correlation, threshold_map
from .interp import upsample
from .metrics import QualityReport, acc_fdr, evaluate_series, jaccard, psnr, ssim3d
from .net import NetConfig, backward, conv3, forward, init_params, load_checkpoint, save_checkpoint
from .phantom import PhantomSpec, PhantomTruth, generate, make_lr_pair
from .train import AdamState, TrainConfig, TrainReport, adam_init, adam_step, fit, infer, loss
from .tv import tv, tv_gradient, tv_value, tv_value_grad
from .volume import Grid3, Series4, Volume3, read_nifti, series_from_array, stats, write_nifti

__all__ = [
    "__version__",
    "AdamState",
    "AnalysisError",
    "ConfigError",
    "DegradationOp",
    "DivergenceError",
    "FormatError",
    "FuncMap",
    "Grid3",
    "GridError",
    "NetConfig",
    "NonFiniteError",
    "PhantomSpec",
    "PhantomTruth",
    "QualityReport",
    "SeedSpec",
    "Series4",
    "StateError",
    "TrainConfig",
    "TrainReport",
    "Volume3",
    "VoxsrError",
    "acc_fdr",
    "adam_init",
    "adam_step",
    "add_noise",
    "automask",
    "backward",
    "blur",
    "blur_adjoint",
    "compare_maps",
    "conv3",
    "downsample",
    "downsample_adjoint",
    "evaluate_series",
    "fit",
    "forward",
    "generate",
    "infer",
    "init_params",
    "jaccard",
    "load_checkpoint",
    "loss",
    "make_lr_pair",
    "psnr",
    "read_nifti",
    "save_checkpoint",
    "seed_correlation",
    "series_from_array",
    "ssim3d",
    "stats",
    "threshold_map",
    "tv",
    "tv_value",
    "tv_gradient",
    "tv_value_grad",
    "upsample",
    "write_nifti",
]
