"""Core grid types, checkerboard masks and the ``.vgrid`` file format.

Arrays are held in numpy with shape ``(nz, ny, nx)`` so that C order is
x-fastest: voxel ``(x, y, z)`` lives at linear index ``x + nx*(y + ny*z)``.
Soft segmentations add a leading channel axis, ``(C, nz, ny, nx)``.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Union

import numpy as np

from .errors import (DimsMismatch, InvalidArgument, MalformedHeader,
                     TruncatedData, UnsupportedDtype)

# Label table
UNLABELED = 0
GM = 1
WM = 2
BG = 3
SRLM = 4
LABEL_NAMES = {UNLABELED: "unlabeled", GM: "GM", WM: "WM", BG: "BG", SRLM: "SRLM"}

# Soft segmentations carry one channel per tissue code, channel k <-> code k+1.
TISSUE_CHANNELS = (GM, WM, BG, SRLM)

MAGIC = "vgrid1"


def channel_of(code: int) -> int:
    """Channel index holding class ``code`` in a soft segmentation."""
    return code - 1


@dataclass(frozen=True)
class GridDims:
    nx: int
    ny: int
    nz: int
    sx: float = 1.0
    sy: float = 1.0
    sz: float = 1.0

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidArgument(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        for name in ("sx", "sy", "sz"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v <= 0:
                raise InvalidArgument(f"{name} must be a positive spacing, got {v!r}")
            object.__setattr__(self, name, v)
        if self.nx * self.ny * self.nz > sys.maxsize:
            raise InvalidArgument("voxel count exceeds the addressable range")

    @classmethod
    def from_shape(cls, shape, spacing=(1.0, 1.0, 1.0)) -> "GridDims":
        """Build from a numpy ``(nz, ny, nx)`` shape and ``(sx, sy, sz)``."""
        nz, ny, nx = shape
        return cls(nx, ny, nz, *spacing)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nz, self.ny, self.nx)

    @property
    def spacing(self) -> tuple[float, float, float]:
        return (self.sx, self.sy, self.sz)

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def min_dim(self) -> int:
        return min(self.nx, self.ny, self.nz)

    def index(self, x: int, y: int, z: int) -> int:
        return x + self.nx * (y + self.ny * z)

    def same_grid(self, other: "GridDims") -> bool:
        return (self.nx, self.ny, self.nz) == (other.nx, other.ny, other.nz)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ScalarField3D:
    dims: GridDims
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.shape != self.dims.shape:
            raise DimsMismatch(f"values shape {values.shape} != grid {self.dims.shape}")
        if not np.issubdtype(values.dtype, np.floating):
            values = values.astype(np.float64)
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("scalar field contains non-finite values")
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def full(cls, dims: GridDims, value: float, dtype=np.float64) -> "ScalarField3D":
        return cls(dims, np.full(dims.shape, value, dtype=dtype))


@dataclass(frozen=True)
class LabelField3D:
    """Integer class codes per voxel.

    Tissue segmentations use the label table above; laminar segmentations
    reuse the type with codes ``0..n_layers`` (0 still meaning "outside").
    """

    dims: GridDims
    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.shape != self.dims.shape:
            raise DimsMismatch(f"labels shape {labels.shape} != grid {self.dims.shape}")
        if labels.size and (labels.min() < 0 or labels.max() > 255):
            raise InvalidArgument("label codes must fit in an unsigned byte")
        object.__setattr__(self, "labels", _frozen(labels.astype(np.uint8)))

    def check_tissue(self) -> "LabelField3D":
        bad = ~np.isin(self.labels, list(LABEL_NAMES))
        if bad.any():
            raise InvalidArgument(f"codes outside the tissue label table: "
                                  f"{sorted(set(self.labels[bad].tolist()))}")
        return self

    def mask(self, *codes: int) -> np.ndarray:
        return np.isin(self.labels, codes)


@dataclass(frozen=True)
class SoftSegmentation:
    dims: GridDims
    probs: np.ndarray = field(repr=False)

    SUM_TOL = 1e-5

    def __post_init__(self):
        probs = np.asarray(self.probs)
        if probs.ndim != 4 or probs.shape[1:] != self.dims.shape:
            raise DimsMismatch(f"probs shape {probs.shape} != (C,) + {self.dims.shape}")
        if not np.issubdtype(probs.dtype, np.floating):
            probs = probs.astype(np.float64)
        if not np.all(np.isfinite(probs)):
            raise InvalidArgument("probabilities must be finite")
        if probs.min() < 0 or probs.max() > 1:
            raise InvalidArgument("probabilities must lie in [0, 1]")
        err = np.abs(probs.sum(axis=0, dtype=np.float64) - 1.0).max()
        if err > self.SUM_TOL:
            raise InvalidArgument(f"channel sums deviate from 1 by {err:.3g}")
        object.__setattr__(self, "probs", _frozen(probs))

    @property
    def channels(self) -> int:
        return self.probs.shape[0]

    @classmethod
    def one_hot(cls, labels: LabelField3D, channels: int = len(TISSUE_CHANNELS),
                dtype=np.float64) -> "SoftSegmentation":
        """One-hot encoding of a tissue label field; UNLABELED voxels become BG."""
        codes = labels.labels.astype(np.intp)
        codes = np.where(codes == UNLABELED, BG, codes)
        probs = np.zeros((channels,) + labels.dims.shape, dtype=dtype)
        for c in range(channels):
            probs[c] = codes == c + 1
        return cls(labels.dims, probs)

    def argmax(self) -> LabelField3D:
        return LabelField3D(self.dims, np.argmax(self.probs, axis=0) + 1)


class Parity(Enum):
    RED = 0
    BLACK = 1


@dataclass(frozen=True)
class CheckerboardMask:
    dims: GridDims
    parity: Parity
    mask: np.ndarray = field(repr=False)

    @property
    def count(self) -> int:
        return int(self.mask.sum())


def checkerboard_array(shape, parity: Parity) -> np.ndarray:
    z, y, x = np.indices(shape, sparse=True)
    return ((x + y + z) % 2) == parity.value


def make_checkerboard(dims: GridDims, parity: Parity) -> CheckerboardMask:
    """Select voxels with ``(x+y+z) % 2 == 0`` (RED) or ``== 1`` (BLACK)."""
    return CheckerboardMask(dims, parity, _frozen(checkerboard_array(dims.shape, parity)))


# --------------------------------------------------------------------------
# .vgrid I/O

Field = Union[ScalarField3D, LabelField3D, SoftSegmentation]

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}
_KIND_DTYPE = {"scalar": "f32", "label": "u8", "soft": "f32"}


def write_vgrid(fld: Field, path) -> None:
    """Write a field as a JSON header line followed by the raw payload.

    Floating values are stored as little-endian float32, so float64 fields
    are rounded on write.
    """
    if isinstance(fld, ScalarField3D):
        kind, data, channels = "scalar", fld.values, 1
    elif isinstance(fld, LabelField3D):
        kind, data, channels = "label", fld.labels, 1
    elif isinstance(fld, SoftSegmentation):
        kind, data, channels = "soft", fld.probs, fld.channels
    else:
        raise TypeError(f"cannot write {type(fld).__name__}")
    dtype = _KIND_DTYPE[kind]
    d = fld.dims
    header = {
        "magic": MAGIC,
        "kind": kind,
        "dims": [d.nx, d.ny, d.nz],
        "spacing": [d.sx, d.sy, d.sz],
        "dtype": dtype,
        "channels": channels,
    }
    payload = np.ascontiguousarray(data, dtype=_DTYPES[dtype]).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(payload)


def _parse_header(line: bytes) -> dict:
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeader(f"header is not valid JSON: {exc}") from None
    if not isinstance(header, dict):
        raise MalformedHeader("header must be a JSON object")
    missing = {"magic", "kind", "dims", "spacing", "dtype", "channels"} - header.keys()
    if missing:
        raise MalformedHeader(f"header missing keys: {sorted(missing)}")
    if header["magic"] != MAGIC:
        raise MalformedHeader(f"bad magic {header['magic']!r}")
    if header["kind"] not in _KIND_DTYPE:
        raise MalformedHeader(f"unknown kind {header['kind']!r}")
    dims, spacing = header["dims"], header["spacing"]
    if (not isinstance(dims, list) or len(dims) != 3
            or not all(isinstance(v, int) and v >= 1 for v in dims)):
        raise MalformedHeader(f"bad dims {dims!r}")
    if (not isinstance(spacing, list) or len(spacing) != 3
            or not all(isinstance(v, (int, float)) and v > 0 for v in spacing)):
        raise MalformedHeader(f"bad spacing {spacing!r}")
    channels = header["channels"]
    if not isinstance(channels, int) or channels < 1:
        raise MalformedHeader(f"bad channel count {channels!r}")
    if header["kind"] != "soft" and channels != 1:
        raise MalformedHeader(f"{header['kind']} fields carry exactly one channel")
    if header["dtype"] not in _DTYPES or header["dtype"] != _KIND_DTYPE[header["kind"]]:
        raise UnsupportedDtype(f"dtype {header['dtype']!r} unsupported for {header['kind']}")
    return header


def read_vgrid(path) -> Field:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise MalformedHeader("no header line terminator")
    header = _parse_header(raw[:nl])
    nx, ny, nz = header["dims"]
    dims = GridDims(nx, ny, nz, *header["spacing"])
    dtype = _DTYPES[header["dtype"]]
    channels = header["channels"]
    count = channels * dims.size
    payload = raw[nl + 1:]
    need = count * dtype.itemsize
    if len(payload) < need:
        raise TruncatedData(f"payload has {len(payload)} bytes, dims imply {need}")
    if len(payload) > need:
        raise MalformedHeader(f"payload has {len(payload) - need} trailing bytes")
    data = np.frombuffer(payload, dtype=dtype, count=count)
    kind = header["kind"]
    if kind == "scalar":
        return ScalarField3D(dims, data.reshape(dims.shape).astype(np.float32))
    if kind == "label":
        return LabelField3D(dims, data.reshape(dims.shape))
    return SoftSegmentation(dims, data.reshape((channels,) + dims.shape).astype(np.float32))
