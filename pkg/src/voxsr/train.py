"""Self-supervised training: downsampling fidelity plus weighted TV.

Per low-resolution frame x, the objective is

    total = sum((x - B f(x))^2) + alpha * tv_value(f(x))

where B is the blur-and-decimate degradation operator and f is the
network. No high-resolution target is involved anywhere. At alpha = 0
the TV term is excluded from the total exactly and the loop reduces to
a deep-image-prior style fit. Optimization is Adam with bias correction
and a plateau schedule that halves the learning rate when the epoch
mean loss stops improving.

A fit starts with an evaluation-only pass recorded as epoch 0; because
the network initializes with a zero projection layer, that epoch's loss
is exactly the loss of plain trilinear upsampling, which anchors
convergence assertions. The returned parameters are a snapshot from
the epoch with the lowest recorded mean loss.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .degrade import (
    DegradationOp,
    _blur_adjoint_array,
    _blur_array,
    _decimate_adjoint_array,
    _decimate_array,
)
from .errors import ConfigError, DivergenceError, GridError, NonFiniteError
from .net import NetConfig, backward, forward, init_params, load_checkpoint
from .tv import tv_value, tv_value_grad
from .volume import Series4, Volume3

__all__ = [
    "TrainConfig",
    "AdamState",
    "EpochRecord",
    "TrainReport",
    "loss",
    "adam_init",
    "adam_step",
    "fit",
    "infer",
]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1.0e-8
_REL_IMPROVE = 1.0e-3  # epoch counts as progress only above this relative gain


@dataclass(frozen=True)
class TrainConfig:
    """Optimization knobs for :func:`fit`."""

    factor: float
    epochs: int = 200
    alpha: float = 0.01
    lr0: float = 1.0e-3
    plateau_patience: int = 5
    lr_halving_floor: float = 1.0e-5
    batch: int = 1
    seed: int = 0
    tv_epsilon: float = 1.0e-8

    def __post_init__(self) -> None:
        f = float(self.factor)
        if not math.isfinite(f) or f < 1.0 or f > 2.0:
            raise ConfigError(f"training factor must be in [1, 2], got {self.factor!r}")
        if not math.isfinite(self.alpha) or self.alpha < 0.0:
            raise ConfigError(f"alpha must be finite and >= 0, got {self.alpha!r}")
        if not (self.lr0 > 0.0 and math.isfinite(self.lr0)):
            raise ConfigError(f"lr0 must be finite and > 0, got {self.lr0!r}")
        if int(self.plateau_patience) < 1:
            raise ConfigError(f"plateau_patience must be >= 1, got {self.plateau_patience!r}")
        if not (0.0 < self.lr_halving_floor <= self.lr0):
            raise ConfigError(
                f"lr_halving_floor must be in (0, lr0], got {self.lr_halving_floor!r}"
            )
        if int(self.epochs) < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs!r}")
        if int(self.batch) < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch!r}")
        if not (self.tv_epsilon > 0.0 and math.isfinite(self.tv_epsilon)):
            raise ConfigError(f"tv_epsilon must be finite and > 0, got {self.tv_epsilon!r}")
        object.__setattr__(self, "factor", f)
        object.__setattr__(self, "epochs", int(self.epochs))
        object.__setattr__(self, "plateau_patience", int(self.plateau_patience))
        object.__setattr__(self, "batch", int(self.batch))
        object.__setattr__(self, "seed", int(self.seed))


@dataclass(frozen=True)
class AdamState:
    """First/second moment estimates plus the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int


def adam_init(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
        step=0,
    )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    if set(grads) != set(params) or any(grads[k].shape != params[k].shape for k in params):
        raise ValueError("gradient tensors do not match parameter tensors")
    t = state.step + 1
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    new_p: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for k, p in params.items():
        g = grads[k].astype(p.dtype, copy=False)
        m = ADAM_BETA1 * state.m[k] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[k] + (1.0 - ADAM_BETA2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        new_p[k] = (p - lr * update).astype(p.dtype)
        new_m[k] = m
        new_v[k] = v
    return new_p, AdamState(m=new_m, v=new_v, step=t)


def _counts_of(shape_zyx: tuple[int, int, int]) -> tuple[int, int, int]:
    return (shape_zyx[2], shape_zyx[1], shape_zyx[0])


def _fidelity_terms(
    y: np.ndarray, x: np.ndarray, op: DegradationOp
) -> tuple[float, np.ndarray]:
    """sum((x - B y)^2) and its gradient 2 B^T (B y - x) w.r.t. y."""
    by = _decimate_array(_blur_array(y, op.blur_sigma_vox), op.factor, _counts_of(x.shape))
    r = by - np.asarray(x, dtype=np.float64)
    fid = float(np.sum(r * r))
    d_y = _blur_adjoint_array(
        _decimate_adjoint_array(2.0 * r, op.factor, _counts_of(y.shape)), op.blur_sigma_vox
    )
    return fid, d_y


def _eval_terms(
    x: np.ndarray,
    params: dict[str, np.ndarray],
    net_cfg: NetConfig,
    op: DegradationOp,
    alpha: float,
    tv_eps: float,
) -> tuple[float, float, float]:
    """(total, fidelity, tv_term) without gradients."""
    y = forward(x, params, net_cfg)
    by = _decimate_array(_blur_array(y, op.blur_sigma_vox), op.factor, _counts_of(x.shape))
    r = by - np.asarray(x, dtype=np.float64)
    fid = float(np.sum(r * r))
    tv_term = tv_value(y, tv_eps)
    total = fid + alpha * tv_term if alpha != 0.0 else fid
    return total, fid, tv_term


def loss(
    x_lr,
    params: dict[str, np.ndarray],
    net_cfg: NetConfig,
    op: DegradationOp,
    alpha: float = 0.01,
    tv_eps: float = 1.0e-8,
) -> tuple[float, float, float, dict[str, np.ndarray]]:
    """Self-supervised objective and its exact parameter gradients.

    Returns (total, fidelity, tv_term, d_params). The fidelity is a sum
    of squares over low-resolution voxels, not a mean. At alpha = 0 the
    TV term is reported but excluded from the total exactly.
    """
    if float(op.factor) != float(net_cfg.factor):
        raise ConfigError(
            f"operator factor {op.factor} does not match network factor {net_cfg.factor}"
        )
    if not math.isfinite(alpha) or alpha < 0.0:
        raise ConfigError(f"alpha must be finite and >= 0, got {alpha!r}")
    x = x_lr.data if isinstance(x_lr, Volume3) else np.asarray(x_lr)
    y, tape = forward(x, params, net_cfg, want_tape=True)
    fid, d_y = _fidelity_terms(y, x, op)
    if alpha != 0.0:
        tv_term, tv_grad = tv_value_grad(y, tv_eps)
        d_y = d_y + alpha * tv_grad
        total = fid + alpha * tv_term
    else:
        tv_term = tv_value(y, tv_eps)
        total = fid
    d_params, _ = backward(tape, d_y.astype(y.dtype))
    return total, fid, tv_term, d_params


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    fidelity: float
    tv: float
    lr: float


def _record_dict(r: EpochRecord) -> dict:
    return {"epoch": r.epoch, "loss": r.loss, "fidelity": r.fidelity,
            "tv": r.tv, "lr": r.lr}


@dataclass(frozen=True)
class TrainReport:
    """Training curve: one record per training epoch plus the pre-training pass.

    ``initial`` is the evaluation-only pass at the freshly initialized
    network (epoch 0); with the zero projection layer its loss equals
    the loss of plain trilinear upsampling. ``records`` hold epochs
    1..N, so the CSV has exactly as many data rows as training epochs.
    """

    initial: EpochRecord
    records: tuple[EpochRecord, ...]
    best_epoch: int
    wall_time_seconds: float

    def to_csv(self) -> str:
        """Deterministic serialization; wall time is excluded by design
        so identically seeded runs emit identical bytes."""
        lines = ["epoch,loss,fidelity,tv,lr"]
        for r in self.records:
            lines.append(f"{r.epoch},{r.loss!r},{r.fidelity!r},{r.tv!r},{r.lr!r}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {
            "initial": _record_dict(self.initial),
            "records": [_record_dict(r) for r in self.records],
            "best_epoch": self.best_epoch,
            "wall_time_seconds": self.wall_time_seconds,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _snapshot(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in params.items()}


def fit(
    dataset,
    net_cfg: NetConfig,
    train_cfg: TrainConfig,
    op: DegradationOp,
) -> tuple[dict[str, np.ndarray], TrainReport]:
    """Train on low-resolution series; returns best params and a report.

    ``dataset`` is a Series4 or a list of them sharing one grid; every
    frame of every series is a training sample. Epochs iterate a seeded
    permutation of all frames; a single-frame dataset is the per-image
    (non-amortized) mode with no special casing. Gradients within a
    batch group are averaged into one Adam step.
    """
    t_start = time.monotonic()
    if isinstance(dataset, Series4):
        dataset = [dataset]
    dataset = list(dataset)
    if not dataset:
        raise ValueError("fit needs at least one series")
    if float(train_cfg.factor) != float(net_cfg.factor):
        raise ConfigError(
            f"training factor {train_cfg.factor} does not match network factor {net_cfg.factor}"
        )
    if float(op.factor) != float(net_cfg.factor):
        raise ConfigError(
            f"operator factor {op.factor} does not match network factor {net_cfg.factor}"
        )
    grid = dataset[0].grid
    for s in dataset:
        if s.grid != grid:
            raise GridError("all series in a dataset must share one grid")
    frames = [f.data for s in dataset for f in s.frames]
    n = len(frames)

    params = init_params(net_cfg, train_cfg.seed)
    state = adam_init(params)
    lr = train_cfg.lr0
    shuffle = _rng.substream(train_cfg.seed, _rng.STREAM_SHUFFLE)

    def epoch_mean_eval() -> tuple[float, float, float]:
        tot = fid = tvv = 0.0
        for x in frames:
            a, b, c = _eval_terms(x, params, net_cfg, op, train_cfg.alpha, train_cfg.tv_epsilon)
            tot += a
            fid += b
            tvv += c
        return tot / n, fid / n, tvv / n

    records: list[EpochRecord] = []
    m_tot, m_fid, m_tv = epoch_mean_eval()
    initial = EpochRecord(0, m_tot, m_fid, m_tv, lr)
    if not math.isfinite(m_tot):
        raise DivergenceError(0, f"non-finite loss {m_tot} at epoch 0")
    best = m_tot
    best_epoch = 0
    best_params = _snapshot(params)
    streak = 0

    for epoch in range(1, train_cfg.epochs + 1):
        order = shuffle.permutation(n)
        lr_epoch = lr
        tot = fid = tvv = 0.0
        try:
            for g0 in range(0, n, train_cfg.batch):
                group = order[g0:g0 + train_cfg.batch]
                g_sum: dict[str, np.ndarray] | None = None
                for j in group:
                    t_j, f_j, tv_j, d_params = loss(
                        frames[j], params, net_cfg, op, train_cfg.alpha, train_cfg.tv_epsilon
                    )
                    tot += t_j
                    fid += f_j
                    tvv += tv_j
                    if not math.isfinite(t_j):
                        raise DivergenceError(epoch, f"non-finite loss {t_j} at epoch {epoch}")
                    if g_sum is None:
                        g_sum = d_params
                    else:
                        for k in g_sum:
                            g_sum[k] += d_params[k]
                if len(group) > 1:
                    inv = np.float32(1.0 / len(group))
                    g_sum = {k: v * inv for k, v in g_sum.items()}
                params, state = adam_step(params, g_sum, state, lr_epoch)
        except NonFiniteError as exc:
            raise DivergenceError(epoch, f"non-finite state at epoch {epoch}: {exc}") from exc
        m_tot, m_fid, m_tv = tot / n, fid / n, tvv / n
        records.append(EpochRecord(epoch, m_tot, m_fid, m_tv, lr_epoch))
        improved = m_tot < best * (1.0 - _REL_IMPROVE)
        if m_tot < best:
            best = m_tot
            best_epoch = epoch
            best_params = _snapshot(params)
        if improved:
            streak = 0
        else:
            streak += 1
            if streak >= train_cfg.plateau_patience:
                lr = max(lr * 0.5, train_cfg.lr_halving_floor)
                streak = 0

    report = TrainReport(
        initial=initial,
        records=tuple(records),
        best_epoch=best_epoch,
        wall_time_seconds=time.monotonic() - t_start,
    )
    return best_params, report


def infer(x_lr: Volume3, checkpoint) -> Volume3:
    """Forward pass from a checkpoint path or a (params, config) pair."""
    if isinstance(checkpoint, (str, bytes)) or hasattr(checkpoint, "__fspath__"):
        params, cfg, _ = load_checkpoint(checkpoint)
    else:
        params, cfg = checkpoint
    return forward(x_lr, params, cfg)
