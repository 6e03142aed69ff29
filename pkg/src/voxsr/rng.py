"""Deterministic random number generation.

All randomness in voxsr flows through counter-based Philox streams keyed on
``(seed, stream)``. A command-level seed is fanned out to sub-streams by fixed
stream ids, so every consumer draws from an independent, reproducible source:
the same (seed, stream) pair yields bitwise-identical values on every run.

Gaussian variates are produced by the Box-Muller transform over Philox
uniforms rather than numpy's ziggurat, which pins the exact output sequence
to this module instead of to a numpy implementation detail.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1

# Fixed sub-stream ids. Per-frame / per-epoch consumers add their index to
# the base id, so bases are spaced far apart.
STREAM_NOISE = 0x100000
STREAM_INIT = 0x200000
STREAM_SHUFFLE = 0x300000
STREAM_PHANTOM_STRUCTURE = 0x400000
STREAM_PHANTOM_NOISE = 0x500000


def substream(seed: int, stream: int = 0) -> np.random.Generator:
    """Generator for the Philox stream keyed on ``(seed, stream)``."""
    key = np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def normal_from(g: np.random.Generator, shape) -> np.ndarray:
    """Standard-normal field drawn sequentially from an existing generator."""
    n = int(np.prod(shape)) if shape else 1
    m = (n + 1) // 2
    # 1 - U in (0, 1] keeps the log argument strictly positive.
    u1 = 1.0 - g.random(m)
    u2 = g.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = (2.0 * math.pi) * u2
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
    return z.reshape(shape)


def normal(shape, seed: int, stream: int = 0) -> np.ndarray:
    """Standard-normal field of the given shape, float64.

    Box-Muller over Philox uniforms; fully determined by (seed, stream, shape).
    """
    return normal_from(substream(seed, stream), shape)


def uniform(shape, seed: int, stream: int = 0) -> np.ndarray:
    """Uniform [0, 1) field of the given shape, float64."""
    g = substream(seed, stream)
    return g.random(int(np.prod(shape)) if shape else 1).reshape(shape)
