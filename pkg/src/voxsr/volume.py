"""Core volumetric data types, grid geometry, and file I/O.

A :class:`Volume3` is one 3D scalar field with voxel spacing in mm; a
:class:`Series4` is an ordered sequence of volumes on a shared grid (an fMRI
run). Arrays are stored C-contiguous with shape ``(nz, ny, nx)``, i.e.
x-fastest linear order: voxel ``(i, j, k)`` lives at flat index
``i + nx*(j + ny*k)``.

File support is deliberately minimal: uncompressed single-file NIfTI-1
(float32, int16, uint16) and a native raw dump format. Orientation and affine
information beyond pixdim is ignored; volumes are compared voxelwise on
identical grids.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import FormatError, GridError, NonFiniteError

_NIFTI_HEADER_SIZE = 348
_NIFTI_VOX_OFFSET = 352
_DT_INT16 = 4
_DT_FLOAT32 = 16
_DT_UINT16 = 512
_RAW_MAGIC = b"VOXSRVOL\x00\x00\x00\x00\x00\x00\x00\x01"


@dataclass(frozen=True)
class Grid3:
    """Voxel counts and spacing (mm) of a regular 3D grid."""

    nx: int
    ny: int
    nz: int
    sx: float
    sy: float
    sz: float

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            n = getattr(self, name)
            if not isinstance(n, (int, np.integer)) or n < 1:
                raise ValueError(f"{name} must be a positive integer, got {n!r}")
            object.__setattr__(self, name, int(n))
        for name in ("sx", "sy", "sz"):
            s = float(getattr(self, name))
            if not (s > 0.0) or not np.isfinite(s):
                raise ValueError(f"{name} must be a positive spacing, got {s!r}")
            object.__setattr__(self, name, s)

    @property
    def shape_zyx(self) -> tuple[int, int, int]:
        """Array shape in (nz, ny, nx) order."""
        return (self.nz, self.ny, self.nx)

    @property
    def counts(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def spacing(self) -> tuple[float, float, float]:
        return (self.sx, self.sy, self.sz)

    @property
    def n_voxels(self) -> int:
        return self.nx * self.ny * self.nz


@dataclass(frozen=True)
class Volume3:
    """One 3D scalar field on a :class:`Grid3`.

    Data is float32, shape ``(nz, ny, nx)``, immutable after construction.
    Construction validates shape and finiteness, so any Volume3 in flight is
    known to be NaN/Inf-free.
    """

    grid: Grid3
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        if arr.shape != self.grid.shape_zyx:
            raise GridError(
                f"data shape {arr.shape} does not match grid {self.grid.shape_zyx}"
            )
        arr = np.ascontiguousarray(arr)
        if not np.isfinite(arr).all():
            raise NonFiniteError("volume contains NaN or Inf values")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    def at(self, i: int, j: int, k: int) -> float:
        """Value at voxel (i, j, k) in x, y, z index order."""
        return float(self.data[k, j, i])

    def flat(self) -> np.ndarray:
        """Read-only view in x-fastest linear order."""
        return self.data.reshape(-1)


@dataclass(frozen=True)
class Series4:
    """Ordered sequence of volumes sharing one grid."""

    grid: Grid3
    frames: tuple[Volume3, ...]
    tr_seconds: float | None = None

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) < 1:
            raise ValueError("a series needs at least one frame")
        for f in frames:
            if f.grid != self.grid:
                raise GridError("all frames must share the series grid")
        object.__setattr__(self, "frames", frames)

    @property
    def t(self) -> int:
        return len(self.frames)

    def as_array(self) -> np.ndarray:
        """Stacked frames, shape (t, nz, ny, nx), float32."""
        return np.stack([f.data for f in self.frames])


def series_from_array(arr: np.ndarray, grid: Grid3,
                      tr_seconds: float | None = None) -> Series4:
    """Build a Series4 from a (t, nz, ny, nx) array."""
    if arr.ndim != 4:
        raise GridError(f"expected a 4D array, got shape {arr.shape}")
    return Series4(grid, tuple(Volume3(grid, arr[i]) for i in range(arr.shape[0])),
                   tr_seconds)


class VolumeStats(NamedTuple):
    min: float
    max: float
    mean: float
    stddev: float


def stats(v: Volume3) -> VolumeStats:
    """Min, max, mean and population stddev over all voxels.

    Population (not sample) stddev keeps one normalization convention with
    the Pearson correlations in :mod:`voxsr.funcmap`. Reductions run in
    float64.
    """
    d = v.data
    mean = float(d.mean(dtype=np.float64))
    var = float(np.square(d.astype(np.float64) - mean).mean())
    return VolumeStats(float(d.min()), float(d.max()), mean, float(np.sqrt(var)))


# ---------------------------------------------------------------------------
# NIfTI-1 I/O (uncompressed single file, little-endian)
# ---------------------------------------------------------------------------

def read_nifti(path) -> Series4:
    """Read an uncompressed NIfTI-1 (.nii) file into a Series4.

    Accepts float32, int16 and uint16 payloads with dim[0] in {3, 4}. Integer
    data is converted to float via scl_slope/scl_inter when the slope is
    nonzero. Spacings come from pixdim[1..3].
    """
    raw = Path(path).read_bytes()
    if len(raw) >= 2 and raw[:2] == b"\x1f\x8b":
        raise FormatError("compression: gzip payload, expected uncompressed .nii")
    if len(raw) < _NIFTI_HEADER_SIZE:
        raise OSError(f"truncated NIfTI header: {len(raw)} bytes")

    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != _NIFTI_HEADER_SIZE:
        raise FormatError(f"sizeof_hdr: expected 348, got {sizeof_hdr}")
    magic = raw[344:348]
    if magic != b"n+1\x00":
        raise FormatError(f"magic: expected b'n+1', got {magic!r}")

    dim = struct.unpack_from("<8h", raw, 40)
    if dim[0] not in (3, 4):
        raise FormatError(f"dim[0]: expected 3 or 4, got {dim[0]}")
    (datatype, bitpix) = struct.unpack_from("<2h", raw, 70)
    pixdim = struct.unpack_from("<8f", raw, 76)
    (vox_offset,) = struct.unpack_from("<f", raw, 108)
    (scl_slope, scl_inter) = struct.unpack_from("<2f", raw, 112)

    dtype_map = {
        _DT_FLOAT32: np.dtype("<f4"),
        _DT_INT16: np.dtype("<i2"),
        _DT_UINT16: np.dtype("<u2"),
    }
    if datatype not in dtype_map:
        raise FormatError(f"datatype: unsupported code {datatype}")
    dt = dtype_map[datatype]

    nx, ny, nz = int(dim[1]), int(dim[2]), int(dim[3])
    t = int(dim[4]) if dim[0] == 4 else 1
    if min(nx, ny, nz, t) < 1:
        raise FormatError(f"dim: non-positive extent in {dim[:5]}")

    offset = int(vox_offset) if vox_offset else _NIFTI_VOX_OFFSET
    count = nx * ny * nz * t
    need = offset + count * dt.itemsize
    if len(raw) < need:
        raise OSError(f"truncated NIfTI payload: have {len(raw)} bytes, need {need}")

    data = np.frombuffer(raw, dtype=dt, count=count, offset=offset)
    if datatype == _DT_FLOAT32:
        data = data.astype(np.float32)
    elif scl_slope != 0.0:
        data = data.astype(np.float32) * np.float32(scl_slope) + np.float32(scl_inter)
    else:
        data = data.astype(np.float32)

    grid = Grid3(nx, ny, nz,
                 float(pixdim[1]) or 1.0,
                 float(pixdim[2]) or 1.0,
                 float(pixdim[3]) or 1.0)
    tr = float(pixdim[4]) if (dim[0] == 4 and pixdim[4] > 0) else None
    return series_from_array(data.reshape(t, nz, ny, nx), grid, tr)


def write_nifti(series: Series4, path) -> None:
    """Write a Series4 as uncompressed little-endian float32 NIfTI-1."""
    g = series.grid
    hdr = bytearray(_NIFTI_HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, _NIFTI_HEADER_SIZE)
    ndim = 3 if series.t == 1 else 4
    struct.pack_into("<8h", hdr, 40, ndim, g.nx, g.ny, g.nz, series.t, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, _DT_FLOAT32, 32)
    tr = series.tr_seconds if series.tr_seconds is not None else 0.0
    struct.pack_into("<8f", hdr, 76, 1.0, g.sx, g.sy, g.sz, tr, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, float(_NIFTI_VOX_OFFSET))
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)
    hdr[123] = 2 | 8  # xyzt_units: mm, seconds
    hdr[344:348] = b"n+1\x00"

    payload = series.as_array().astype("<f4", copy=False)
    with open(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(b"\x00" * (_NIFTI_VOX_OFFSET - _NIFTI_HEADER_SIZE))
        fh.write(payload.tobytes())


# ---------------------------------------------------------------------------
# Native raw dump format
# ---------------------------------------------------------------------------

def write_raw(series: Series4, path) -> None:
    """Write the native raw dump: magic, u32 counts, f32 spacings, payload."""
    g = series.grid
    with open(path, "wb") as fh:
        fh.write(_RAW_MAGIC)
        fh.write(struct.pack("<4I", g.nx, g.ny, g.nz, series.t))
        fh.write(struct.pack("<3f", g.sx, g.sy, g.sz))
        fh.write(series.as_array().astype("<f4", copy=False).tobytes())


def read_raw(path) -> Series4:
    """Read the native raw dump format written by :func:`write_raw`."""
    raw = Path(path).read_bytes()
    if len(raw) < len(_RAW_MAGIC) + 16 + 12:
        raise OSError(f"truncated raw volume: {len(raw)} bytes")
    if raw[: len(_RAW_MAGIC)] != _RAW_MAGIC:
        raise FormatError(f"magic: expected {_RAW_MAGIC!r}")
    nx, ny, nz, t = struct.unpack_from("<4I", raw, 16)
    sx, sy, sz = struct.unpack_from("<3f", raw, 32)
    count = nx * ny * nz * t
    need = 44 + count * 4
    if len(raw) < need:
        raise OSError(f"truncated raw payload: have {len(raw)} bytes, need {need}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=44)
    return series_from_array(data.reshape(t, nz, ny, nx).astype(np.float32),
                             Grid3(nx, ny, nz, sx, sy, sz))
