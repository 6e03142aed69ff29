"""Command-line pipeline: phantom, degrade, train, sr, eval, funcmap.

Each command resolves its flags, does its work through the library
modules, and writes exactly one manifest.json beside its outputs with
the resolved parameters, seeds, paths, tool version, and wall time, so
a run can be reproduced from the manifest alone.

Exit codes: 0 success, 2 usage or inconsistent inputs, 3 numerical
failure (divergence, non-finite data, degenerate analysis), 4 I/O or
file-format trouble.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from ._version import __version__
from .degrade import DegradationOp
from .errors import (
    AnalysisError,
    ConfigError,
    DivergenceError,
    FormatError,
    GridError,
    NonFiniteError,
)
from .funcmap import SeedSpec, compare_maps, seed_correlation, threshold_map
from .interp import METHODS, upsample
from .metrics import evaluate_series
from .net import NetConfig, load_checkpoint, save_checkpoint
from .phantom import PhantomSpec, generate, make_lr_pair, mask_to_rle
from .train import TrainConfig, fit, infer
from .volume import Series4, Volume3, read_nifti, write_nifti

_DEGRADE_FACTORS = (1.25, 1.5, 1.75, 2.0)


def _out_dir(path_str: str) -> Path:
    out = Path(path_str)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, params: dict, inputs: list, outputs: list, t0: float) -> Path:
    manifest = {
        "command": command,
        "parameters": params,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "version": __version__,
        "wall_time_seconds": time.monotonic() - t0,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _single_volume(series: Series4, what: str) -> Volume3:
    if series.t != 1:
        raise GridError(f"{what} must be a single 3D volume, got {series.t} frames")
    return series.frames[0]


def _to_u8(slab: np.ndarray, lo: float, hi: float) -> np.ndarray:
    span = hi - lo if hi > lo else 1.0
    return np.clip((slab.astype(np.float64) - lo) / span * 255.0, 0.0, 255.0).astype(np.uint8)


def _save_slice_png(path: Path, left: np.ndarray, right: np.ndarray | None, lo: float, hi: float) -> None:
    """Mid-axial grayscale snapshot; the window [lo, hi] is fixed by the caller."""
    panels = [_to_u8(left, lo, hi)]
    if right is not None:
        gap = np.full((left.shape[0], 2), 255, dtype=np.uint8)
        panels += [gap, _to_u8(right, lo, hi)]
    Image.fromarray(np.concatenate(panels, axis=1), mode="L").save(str(path))


def cmd_phantom(args) -> int:
    t0 = time.monotonic()
    out = _out_dir(args.out)
    spec = PhantomSpec(
        size=(args.size, args.size, args.size),
        timepoints=args.timepoints,
        noise_sigma=args.noise_sigma,
        noise_smooth_vox=args.noise_smooth,
        activation_amplitude=args.amplitude,
        activation_period=args.period,
        activation_radius_mm=args.activation_radius,
        seed=args.seed,
    )
    series, truth = generate(spec)
    hr_path = out / "hr.nii"
    write_nifti(series, hr_path)
    truth_path = out / "truth.json"
    truth_payload = {
        "grid": {"counts": list(series.grid.counts), "spacing": list(series.grid.spacing)},
        "activation_center_mm": list(truth.activation_center_mm),
        "activation_amplitude": truth.activation_amplitude,
        "activation_period": truth.activation_period,
        "clip_high": truth.clip_high,
        "head_mask_rle": mask_to_rle(truth.head_mask),
        "activation_mask_rle": mask_to_rle(truth.activation_mask),
    }
    truth_path.write_text(json.dumps(truth_payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    params = {
        "size": args.size, "timepoints": args.timepoints, "noise_sigma": args.noise_sigma,
        "noise_smooth": args.noise_smooth, "amplitude": args.amplitude, "period": args.period,
        "activation_radius": args.activation_radius, "seed": args.seed,
    }
    _write_manifest(out, "phantom", params, [], [hr_path, truth_path], t0)
    print(f"wrote {hr_path}")
    return 0


def cmd_degrade(args) -> int:
    t0 = time.monotonic()
    out = _out_dir(args.out)
    sigma = None if args.sigma is None else (args.sigma, args.sigma, args.sigma)
    op = DegradationOp(factor=args.factor, blur_sigma_vox=sigma,
                       noise_variance=args.noise_var, seed=args.seed)
    series = read_nifti(getattr(args, "in"))
    lr, _ = make_lr_pair(series, op)
    lr_path = out / "lr.nii"
    write_nifti(lr, lr_path)
    params = {
        "factor": op.factor, "blur_sigma_vox": list(op.blur_sigma_vox),
        "noise_variance": op.noise_variance, "seed": op.seed,
    }
    _write_manifest(out, "degrade", params, [getattr(args, "in")], [lr_path], t0)
    print(f"wrote {lr_path} ({lr.grid.counts} at spacing {lr.grid.spacing})")
    return 0


def _parse_sweep(text: str) -> list[float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"--sweep-alpha wants lo:hi:n, got {text!r}")
    lo, hi = float(parts[0]), float(parts[1])
    n = int(parts[2])
    if n < 1 or hi < lo or lo < 0:
        raise ConfigError(f"--sweep-alpha wants 0 <= lo <= hi and n >= 1, got {text!r}")
    return [float(a) for a in np.linspace(lo, hi, n)]


def cmd_train(args) -> int:
    t0 = time.monotonic()
    out = _out_dir(args.out)
    paths = getattr(args, "in")
    dataset = [read_nifti(p) for p in paths]
    alphas = _parse_sweep(args.sweep_alpha) if args.sweep_alpha else [args.alpha]
    net_cfg = NetConfig(factor=args.factor, layers=args.layers, channels=args.channels)
    outputs = []
    for alpha in alphas:
        train_cfg = TrainConfig(
            factor=args.factor, epochs=args.epochs, alpha=alpha, lr0=args.lr,
            batch=args.batch, seed=args.seed,
        )
        params, report = fit(dataset, net_cfg, train_cfg, DegradationOp(factor=args.factor))
        tag = "" if len(alphas) == 1 else f"_alpha_{alpha:g}"
        ckpt_path = out / f"model{tag}.ckpt"
        save_checkpoint(ckpt_path, params, net_cfg,
                        meta={"alpha": alpha, "seed": args.seed,
                              "epochs": args.epochs, "factor": args.factor})
        (out / f"report{tag}.csv").write_text(report.to_csv(), encoding="utf-8")
        (out / f"report{tag}.json").write_text(report.to_json(), encoding="utf-8")
        outputs += [ckpt_path, out / f"report{tag}.csv", out / f"report{tag}.json"]
        print(f"alpha={alpha:g}: initial loss {report.initial.loss:.6g}, "
              f"best epoch {report.best_epoch}")
    params_manifest = {
        "factor": args.factor, "alpha": args.alpha, "sweep_alpha": args.sweep_alpha,
        "epochs": args.epochs, "lr": args.lr, "batch": args.batch,
        "layers": args.layers, "channels": args.channels, "seed": args.seed,
    }
    _write_manifest(out, "train", params_manifest, list(paths), outputs, t0)
    return 0


def cmd_sr(args) -> int:
    t0 = time.monotonic()
    out = _out_dir(args.out)
    if (args.ckpt is None) == (args.method is None):
        raise ConfigError("pass exactly one of --ckpt or --method")
    series = read_nifti(getattr(args, "in"))
    if args.ckpt is not None:
        params, cfg, _meta = load_checkpoint(args.ckpt)
        if args.factor is not None and float(args.factor) != cfg.factor:
            raise ConfigError(
                f"--factor {args.factor} conflicts with checkpoint factor {cfg.factor}"
            )
        frames = [infer(f, (params, cfg)) for f in series.frames]
        how = {"checkpoint": str(args.ckpt), "factor": cfg.factor}
    else:
        if args.factor is None:
            raise ConfigError("--method needs --factor")
        frames = [upsample(f, args.factor, args.method) for f in series.frames]
        how = {"method": args.method, "factor": args.factor}
    sr = Series4(frames[0].grid, tuple(frames), series.tr_seconds)
    sr_path = out / "sr.nii"
    write_nifti(sr, sr_path)
    _write_manifest(out, "sr", how, [getattr(args, "in")], [sr_path], t0)
    print(f"wrote {sr_path} ({sr.grid.counts} at spacing {sr.grid.spacing})")
    return 0


def cmd_eval(args) -> int:
    t0 = time.monotonic()
    out = _out_dir(args.out)
    gt = read_nifti(args.gt)
    est = read_nifti(args.est)
    if gt.grid != est.grid:
        raise GridError(
            f"grid mismatch: gt {gt.grid.counts}@{gt.grid.spacing} vs est {est.grid.counts}@{est.grid.spacing}"
        )
    if args.mask is not None:
        mask = _single_volume(read_nifti(args.mask), "--mask")
        if mask.grid != gt.grid:
            raise GridError(f"mask grid {mask.grid.counts} does not match gt {gt.grid.counts}")
        keep = (mask.data != 0).astype(np.float32)
        gt = Series4(gt.grid, tuple(Volume3(gt.grid, f.data * keep) for f in gt.frames), gt.tr_seconds)
        est = Series4(est.grid, tuple(Volume3(est.grid, f.data * keep) for f in est.frames), est.tr_seconds)
    policy = "minmax" if args.range == "auto" else float(args.range)
    result = evaluate_series(gt, est, policy)
    json_path = out / "report.json"
    json_path.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    csv_path = out / "report.csv"
    lines = ["frame,psnr_db,ssim,data_range"]
    for f in result["frames"]:
        lines.append(f'{f["frame"]},{f["psnr_db"]!r},{f["ssim"]!r},{f["data_range"]!r}')
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    png_path = out / "midslice.png"
    g0 = gt.frames[0].data
    e0 = est.frames[0].data
    z = g0.shape[0] // 2
    _save_slice_png(png_path, g0[z], e0[z], float(g0.min()), float(g0.max()))
    params = {"range": args.range, "mask": args.mask,
              "psnr_mean_db": result["psnr_mean_db"], "psnr_sd_db": result["psnr_sd_db"],
              "ssim_mean": result["ssim_mean"], "ssim_sd": result["ssim_sd"]}
    _write_manifest(out, "eval", params, [args.gt, args.est], [json_path, csv_path, png_path], t0)
    print(f"psnr {result['psnr_mean_db']:.4f} +- {result['psnr_sd_db']:.4f} dB, "
          f"ssim {result['ssim_mean']:.6f} +- {result['ssim_sd']:.6f}")
    return 0


def cmd_funcmap(args) -> int:
    t0 = time.monotonic()
    out = _out_dir(args.out)
    series = read_nifti(getattr(args, "in"))
    center = tuple(float(c) for c in args.seed.split(","))
    if len(center) != 3:
        raise ConfigError(f"--seed wants x,y,z in mm, got {args.seed!r}")
    extent = (series.grid.nx * series.grid.sx,
              series.grid.ny * series.grid.sy,
              series.grid.nz * series.grid.sz)
    if any(c < 0 or c > e for c, e in zip(center, extent)):
        raise ConfigError(f"seed {center} lies outside the grid extent {extent}")
    fmap = seed_correlation(series, SeedSpec(center, args.radius),
                            threshold=args.thresh, detrend=args.detrend)
    rmap_path = out / "rmap.nii"
    write_nifti(Series4(fmap.grid, (Volume3(fmap.grid, fmap.r_values.copy()),)), rmap_path)
    binary = threshold_map(fmap)
    bin_path = out / "binary.nii"
    write_nifti(Series4(fmap.grid, (binary,)), bin_path)
    png_path = out / "rmap.png"
    z = fmap.r_values.shape[0] // 2
    _save_slice_png(png_path, fmap.r_values[z], None, -1.0, 1.0)
    outputs = [rmap_path, bin_path, png_path]
    comparison = None
    if args.compare is not None:
        ref = _single_volume(read_nifti(args.compare), "--compare")
        accuracy, fdr, jac = compare_maps(ref, binary)
        comparison = {"accuracy": accuracy, "fdr": fdr, "jaccard": jac}
        cmp_path = out / "compare.json"
        cmp_path.write_text(json.dumps(comparison, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        outputs.append(cmp_path)
        print(f"accuracy {accuracy:.6f}, fdr {fdr:.6f}, jaccard {jac:.6f}")
    params = {"seed": list(center), "radius": args.radius, "thresh": args.thresh,
              "detrend": args.detrend, "compare": args.compare, "comparison": comparison}
    inputs = [getattr(args, "in")] + ([args.compare] if args.compare else [])
    _write_manifest(out, "funcmap", params, inputs, outputs, t0)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxsr",
        description="Self-supervised volumetric super-resolution toolkit",
    )
    parser.add_argument("--version", action="version", version=f"voxsr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic 4D series with ground truth")
    p.add_argument("--size", type=int, default=32, help="cubic grid size (default 32)")
    p.add_argument("--timepoints", type=int, default=20)
    p.add_argument("--noise-sigma", type=float, default=25.0)
    p.add_argument("--noise-smooth", type=float, default=2.0,
                   help="spatial smoothing of the temporal noise, in voxels")
    p.add_argument("--amplitude", type=float, default=100.0,
                   help="activation sinusoid amplitude")
    p.add_argument("--period", type=float, default=8.0,
                   help="activation sinusoid period in frames")
    p.add_argument("--activation-radius", type=float, default=4.5,
                   help="activation cluster radius in mm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("degrade", help="blur, decimate, and add observation noise")
    p.add_argument("--factor", type=float, required=True, choices=list(_DEGRADE_FACTORS))
    p.add_argument("--sigma", type=float, default=None,
                   help="isotropic blur sigma in voxels (default 0.5*(factor-1))")
    p.add_argument("--noise-var", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--in", dest="in", required=True, metavar="HR_NII")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", help="fit the SR network on low-resolution series")
    p.add_argument("--in", dest="in", nargs="+", required=True, metavar="LR_NII")
    p.add_argument("--factor", type=float, required=True)
    p.add_argument("--alpha", type=float, default=0.01, help="TV weight; 0 is DIP mode")
    p.add_argument("--sweep-alpha", default=None, metavar="LO:HI:N",
                   help="train once per alpha in a linear grid")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1.0e-3)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--layers", type=int, default=10)
    p.add_argument("--channels", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sr", help="super-resolve a series from a checkpoint or baseline")
    p.add_argument("--in", dest="in", required=True, metavar="LR_NII")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--method", default=None, choices=list(METHODS))
    p.add_argument("--factor", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("eval", help="PSNR/SSIM of an estimate against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--est", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("--range", default="auto",
                   help="'auto' (gt max-min) or an explicit numeric range")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("funcmap", help="seed-correlation map and optional comparison")
    p.add_argument("--in", dest="in", required=True, metavar="SERIES_NII")
    p.add_argument("--seed", required=True, metavar="X,Y,Z", help="seed center in mm")
    p.add_argument("--radius", type=float, default=3.0)
    p.add_argument("--thresh", type=float, default=0.5)
    p.add_argument("--detrend", action="store_true")
    p.add_argument("--compare", default=None, metavar="REF_NII",
                   help="binary reference map; emits accuracy/fdr/jaccard against it")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_funcmap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, GridError, ValueError) as exc:
        print(f"voxsr: usage error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, NonFiniteError, AnalysisError) as exc:
        print(f"voxsr: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (FormatError, OSError) as exc:
        print(f"voxsr: i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
