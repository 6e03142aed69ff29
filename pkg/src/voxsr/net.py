"""3D super-resolution network with from-scratch forward and backward.

Architecture: a trilinear upsampling front-end, a stem convolution with
ReLU, a block of densely connected convolutional layers (each layer sees
the concatenation of the stem output and all previous layer outputs),
a 1-channel projection convolution, and a global residual connection
that adds the trilinear upsample back to the projection output.

All convolutions are 3x3x3 cross-correlations with zero padding 1 and
stride 1. The projection layer initializes to zero, so a freshly
initialized network reproduces trilinear upsampling exactly. Gradients
are computed by hand-written reverse-mode passes; no autograd framework
is involved, and the arithmetic is generic over float32/float64 so
gradient checks can run in 64-bit.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from ._resample import AXIS_OF, apply_taps_adjoint, linear_taps, up_coords
from .errors import ConfigError, FormatError, NonFiniteError, StateError
from .interp import scaled_dims, upsample_array
from .volume import Grid3, Volume3

__all__ = [
    "NetConfig",
    "Tape",
    "conv3",
    "conv3_backward",
    "init_params",
    "param_shapes",
    "forward",
    "backward",
    "save_checkpoint",
    "load_checkpoint",
]

_MIN_FACTOR = 1.0
_MAX_FACTOR = 2.0


@dataclass(frozen=True)
class NetConfig:
    """Shape of the network: depth, width, and upsampling factor."""

    factor: float
    layers: int = 10
    channels: int = 24
    kernel: int = 3
    global_residual: bool = True

    def __post_init__(self) -> None:
        if self.kernel != 3:
            raise ConfigError(f"kernel size is fixed at 3, got {self.kernel!r}")
        if int(self.layers) < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers!r}")
        if int(self.channels) < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels!r}")
        f = float(self.factor)
        if not math.isfinite(f) or f < _MIN_FACTOR or f > _MAX_FACTOR:
            raise ConfigError(
                f"network factor must be in [{_MIN_FACTOR}, {_MAX_FACTOR}], got {self.factor!r}"
            )
        object.__setattr__(self, "factor", f)
        object.__setattr__(self, "layers", int(self.layers))
        object.__setattr__(self, "channels", int(self.channels))
        object.__setattr__(self, "global_residual", bool(self.global_residual))


def param_shapes(cfg: NetConfig) -> dict[str, tuple[int, ...]]:
    """Parameter tensor shapes in declaration order.

    Dense wiring: layer i consumes channels*(i+1) input channels (the
    stem output plus every previous dense layer's output); the final
    projection consumes channels*(layers+1) and emits one channel.
    """
    c, n = cfg.channels, cfg.layers
    shapes: dict[str, tuple[int, ...]] = {
        "stem.w": (c, 1, 3, 3, 3),
        "stem.b": (c,),
    }
    for i in range(n):
        shapes[f"dense{i}.w"] = (c, c * (i + 1), 3, 3, 3)
        shapes[f"dense{i}.b"] = (c,)
    shapes["proj.w"] = (1, c * (n + 1), 3, 3, 3)
    shapes["proj.b"] = (1,)
    return shapes


def _check_params(params: dict[str, np.ndarray], cfg: NetConfig) -> None:
    shapes = param_shapes(cfg)
    if set(params.keys()) != set(shapes.keys()):
        raise ConfigError(
            f"parameter keys {sorted(params)} do not match the config's layout {sorted(shapes)}"
        )
    for name, shape in shapes.items():
        if tuple(params[name].shape) != shape:
            raise ConfigError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
        if not np.all(np.isfinite(params[name])):
            raise NonFiniteError(f"parameter {name} contains non-finite values")


def init_params(cfg: NetConfig, seed: int) -> dict[str, np.ndarray]:
    """He fan-in Gaussian hidden weights, zero biases, zero projection.

    The zero projection makes the step-0 network output exactly the
    trilinear upsample of its input. Deterministic per seed.
    """
    g = _rng.substream(seed, _rng.STREAM_INIT)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg).items():
        if name.startswith("proj") or name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=np.float32)
            continue
        fan_in = shape[1] * 27
        std = math.sqrt(2.0 / fan_in)
        params[name] = (_rng.normal_from(g, shape) * std).astype(np.float32)
    return params


def conv3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3x3 cross-correlation, zero padding 1, stride 1.

    ``x`` is (C_in, D, H, W), ``w`` is (C_out, C_in, 3, 3, 3), ``b`` is
    (C_out,). Returns (C_out, D, H, W) in the input dtype. Each kernel
    tap contributes one (C_out, C_in) x (C_in, N) matrix product over a
    shifted view of the zero-padded input.
    """
    x = np.asarray(x)
    w = np.asarray(w, dtype=x.dtype)
    b = np.asarray(b, dtype=x.dtype)
    if x.ndim != 4 or w.ndim != 5 or b.ndim != 1:
        raise ValueError(f"conv3 expects x 4D, w 5D, b 1D; got {x.shape}, {w.shape}, {b.shape}")
    cin, d, h, wd = x.shape
    if w.shape[1] != cin or w.shape[2:] != (3, 3, 3) or b.shape[0] != w.shape[0]:
        raise ValueError(f"conv3 shape mismatch: x {x.shape}, w {w.shape}, b {b.shape}")
    cout = w.shape[0]
    n = d * h * wd
    xp = np.zeros((cin, d + 2, h + 2, wd + 2), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, 1:-1] = x
    wt = w.reshape(cout, cin, 27)
    acc = np.zeros((cout, n), dtype=x.dtype)
    for t in range(27):
        tz, ty, tx = t // 9, (t // 3) % 3, t % 3
        patch = xp[:, tz:tz + d, ty:ty + h, tx:tx + wd].reshape(cin, n)
        acc += wt[:, :, t] @ patch
    out = acc.reshape(cout, d, h, wd)
    out += b[:, None, None, None]
    return out


def conv3_backward(
    d_out: np.ndarray, x: np.ndarray, w: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of <d_out, conv3(x, w, b)> with respect to x, w, b."""
    x = np.asarray(x)
    d_out = np.asarray(d_out, dtype=x.dtype)
    w = np.asarray(w, dtype=x.dtype)
    cin, d, h, wd = x.shape
    cout = w.shape[0]
    if d_out.shape != (cout, d, h, wd):
        raise ValueError(f"conv3_backward shape mismatch: d_out {d_out.shape}, x {x.shape}, w {w.shape}")
    n = d * h * wd
    xp = np.zeros((cin, d + 2, h + 2, wd + 2), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, 1:-1] = x
    dof = d_out.reshape(cout, n)
    d_w = np.empty_like(w)
    d_xp = np.zeros_like(xp)
    wt = w.reshape(cout, cin, 27)
    for t in range(27):
        tz, ty, tx = t // 9, (t // 3) % 3, t % 3
        sl = (slice(None), slice(tz, tz + d), slice(ty, ty + h), slice(tx, tx + wd))
        patch = xp[sl].reshape(cin, n)
        d_w.reshape(cout, cin, 27)[:, :, t] = dof @ patch.T
        d_xp[sl] += (wt[:, :, t].T @ dof).reshape(cin, d, h, wd)
    d_x = d_xp[:, 1:-1, 1:-1, 1:-1].copy()
    d_b = d_out.sum(axis=(1, 2, 3))
    return d_x, d_w, d_b


class Tape:
    """Activations recorded by one forward pass; consumed once by backward."""

    def __init__(self, cfg, params, u, buf, in_shape, grid):
        self.cfg = cfg
        self.params = params
        self.u = u
        self.buf = buf
        self.in_shape = in_shape
        self.grid = grid  # LR grid when forward was fed a Volume3, else None
        self.consumed = False

    def consume(self):
        if self.consumed:
            raise StateError("tape already consumed by a backward pass")
        self.consumed = True


def _out_dims_for(in_shape_zyx: tuple[int, int, int], factor: float) -> tuple[int, int, int]:
    counts = (in_shape_zyx[2], in_shape_zyx[1], in_shape_zyx[0])
    return scaled_dims(counts, factor)


def _forward_array(x: np.ndarray, params: dict[str, np.ndarray], cfg: NetConfig):
    dtype = params["stem.w"].dtype
    if cfg.factor == 1.0:
        u = np.asarray(x, dtype=dtype).copy()
    else:
        dims = _out_dims_for(x.shape, cfg.factor)
        u = upsample_array(x, cfg.factor, dims, method="trilinear").astype(dtype)
    c, nlay = cfg.channels, cfg.layers
    d, h, wd = u.shape
    buf = np.empty((c * (nlay + 1), d, h, wd), dtype=dtype)
    buf[0:c] = np.maximum(conv3(u[None], params["stem.w"], params["stem.b"]), 0)
    for i in range(nlay):
        feats = conv3(buf[: c * (i + 1)], params[f"dense{i}.w"], params[f"dense{i}.b"])
        buf[c * (i + 1): c * (i + 2)] = np.maximum(feats, 0)
    y = conv3(buf, params["proj.w"], params["proj.b"])[0]
    out = y + u if cfg.global_residual else y
    return out, u, buf


def _upsample_adjoint_array(d: np.ndarray, factor: float, lr_shape_zyx: tuple[int, int, int]) -> np.ndarray:
    """Exact adjoint of the trilinear upsampling front-end."""
    out = np.asarray(d)
    for name in ("x", "y", "z"):
        ax = AXIS_OF[name]
        n_in = lr_shape_zyx[ax]
        n_out = out.shape[ax]
        coords = up_coords(n_out, factor, n_in)
        idx, wts = linear_taps(coords, n_in)
        out = apply_taps_adjoint(out, ax, idx, wts, n_in)
    return out


def forward(x, params: dict[str, np.ndarray], cfg: NetConfig, want_tape: bool = False):
    """Run the network; returns the SR estimate, plus a tape if requested.

    Accepts a Volume3 (returns a Volume3 on the upsampled grid) or a raw
    (z, y, x) array (returns an array in the parameters' dtype, which is
    how the 64-bit gradient check mode runs). Pure: identical inputs
    produce bitwise-identical outputs.
    """
    _check_params(params, cfg)
    if isinstance(x, Volume3):
        data, grid = x.data, x.grid
    else:
        data, grid = np.asarray(x), None
    out, u, buf = _forward_array(data, params, cfg)
    if grid is not None:
        f = cfg.factor
        nzo, nyo, nxo = out.shape
        ogrid = Grid3(nx=nxo, ny=nyo, nz=nzo, sx=grid.sx / f, sy=grid.sy / f, sz=grid.sz / f)
        result = Volume3(ogrid, out.astype(np.float32))
    else:
        result = out
    if not want_tape:
        return result
    return result, Tape(cfg, params, u, buf, data.shape, grid)


def backward(tape: Tape, d_output) -> tuple[dict[str, np.ndarray], np.ndarray | Volume3]:
    """Gradients of <d_output, forward(x)> w.r.t. parameters and input.

    ``d_output`` may be a Volume3 or an array matching the forward
    output's spatial shape. The tape is single-use; a second call raises.
    ReLU passes zero gradient wherever the stored activation is zero.
    """
    tape.consume()
    cfg, params, u, buf = tape.cfg, tape.params, tape.u, tape.buf
    dtype = u.dtype
    d_out = d_output.data if isinstance(d_output, Volume3) else np.asarray(d_output)
    d_out = d_out.astype(dtype, copy=False)
    if d_out.shape != u.shape:
        raise ValueError(f"d_output shape {d_out.shape} does not match forward output {u.shape}")
    c, nlay = cfg.channels, cfg.layers
    grads: dict[str, np.ndarray] = {}

    d_u = d_out.copy() if cfg.global_residual else np.zeros_like(d_out)
    d_buf_full, grads["proj.w"], grads["proj.b"] = conv3_backward(d_out[None], buf, params["proj.w"])
    d_buf = d_buf_full
    for i in range(nlay - 1, -1, -1):
        sl = slice(c * (i + 1), c * (i + 2))
        d_feat = d_buf[sl] * (buf[sl] > 0)
        d_in, grads[f"dense{i}.w"], grads[f"dense{i}.b"] = conv3_backward(
            d_feat, buf[: c * (i + 1)], params[f"dense{i}.w"]
        )
        d_buf[: c * (i + 1)] += d_in
    d_stem = d_buf[0:c] * (buf[0:c] > 0)
    d_u_stem, grads["stem.w"], grads["stem.b"] = conv3_backward(d_stem, u[None], params["stem.w"])
    d_u += d_u_stem[0]

    if cfg.factor == 1.0:
        d_x = d_u
    else:
        d_x = _upsample_adjoint_array(d_u, cfg.factor, tape.in_shape)
    grads = {name: grads[name] for name in param_shapes(cfg)}
    if tape.grid is not None:
        return grads, Volume3(tape.grid, d_x.astype(np.float32))
    return grads, d_x


_CKPT_MAGIC = b"VOXSRCKPT"
_CKPT_VERSION = 1


def save_checkpoint(path, params: dict[str, np.ndarray], cfg: NetConfig, meta: dict | None = None) -> None:
    """Write parameters and config; meta lands in a JSON sidecar.

    Binary layout: magic, version u32, layers/channels/kernel u32,
    global_residual u8, factor f64, then each tensor in declaration
    order as ndim u32, dims u32 each, float32 little-endian payload.
    """
    _check_params(params, cfg)
    path = str(path)
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<IIIIBd", _CKPT_VERSION, cfg.layers, cfg.channels,
                             cfg.kernel, int(cfg.global_residual), cfg.factor))
        for name in param_shapes(cfg):
            arr = np.ascontiguousarray(params[name], dtype="<f4")
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())
    sidecar = {
        "config": {
            "layers": cfg.layers,
            "channels": cfg.channels,
            "kernel": cfg.kernel,
            "factor": cfg.factor,
            "global_residual": cfg.global_residual,
        }
    }
    sidecar.update(meta or {})
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], NetConfig, dict]:
    """Read a checkpoint; returns (params, config, sidecar metadata)."""
    path = str(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_CKPT_MAGIC) + 21 or blob[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise FormatError(f"{path}: not a voxsr checkpoint")
    off = len(_CKPT_MAGIC)
    version, layers, channels, kernel, gres, factor = struct.unpack_from("<IIIIBd", blob, off)
    off += struct.calcsize("<IIIIBd")
    if version != _CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        cfg = NetConfig(factor=factor, layers=layers, channels=channels,
                        kernel=kernel, global_residual=bool(gres))
    except ConfigError as exc:
        raise FormatError(f"{path}: invalid checkpoint config: {exc}") from exc
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg).items():
        if off + 4 > len(blob):
            raise FormatError(f"{path}: truncated before tensor {name}")
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        if ndim != len(shape) or off + 4 * ndim > len(blob):
            raise FormatError(f"{path}: bad shape header for tensor {name}")
        dims = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        if tuple(dims) != shape:
            raise FormatError(f"{path}: tensor {name} has dims {dims}, expected {shape}")
        nbytes = 4 * int(np.prod(shape))
        if off + nbytes > len(blob):
            raise FormatError(f"{path}: truncated payload for tensor {name}")
        params[name] = np.frombuffer(blob, dtype="<f4", count=int(np.prod(shape)),
                                     offset=off).reshape(shape).astype(np.float32)
        off += nbytes
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes after tensors")
    _check_params(params, cfg)
    meta: dict = {}
    try:
        with open(path + ".json", "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError):
        meta = {}
    return params, cfg, meta
