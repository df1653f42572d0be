"""3D grid types, SVOL file I/O, resampling, cropping, sub-volume sampling and rotation.

All grids use (z, y, x) axis order, row-major with x fastest.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import ClassVar

import numpy as np

from .errors import DataError, SvolDomainError, SvolMagicError, SvolSizeError

SVOL_MAGIC = b"SVOL"
_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


def _as_triple(values, name, cast=float):
    t = tuple(cast(v) for v in values)
    if len(t) != 3:
        raise ValueError(f"{name} must have 3 components, got {len(t)}")
    return t


@dataclass(frozen=True, eq=False)
class _Grid:
    data: np.ndarray
    spacing_mm: tuple = (1.0, 1.0, 1.0)

    kind: ClassVar[str] = ""
    dtype: ClassVar[np.dtype] = np.dtype(np.float32)

    def __post_init__(self):
        data = np.array(self.data, dtype=self.dtype, copy=True, order="C")
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"{type(self).__name__} needs a non-empty 3D array, got shape {data.shape}")
        spacing = _as_triple(self.spacing_mm, "spacing_mm")
        if not all(s > 0 and math.isfinite(s) for s in spacing):
            raise ValueError(f"spacing components must be positive, got {spacing}")
        self._validate(data)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing_mm", spacing)

    def _validate(self, data):
        pass

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def voxel_volume_mm3(self) -> float:
        sz, sy, sx = self.spacing_mm
        return sz * sy * sx

    def with_data(self, data):
        return type(self)(data, self.spacing_mm)

    def __eq__(self, other):
        return (
            type(self) is type(other)
            and self.spacing_mm == other.spacing_mm
            and self.shape == other.shape
            and np.array_equal(self.data, other.data)
        )


class Volume(_Grid):
    """Scalar intensity grid (HU-like units), stored as float32."""

    kind = "volume"
    dtype = np.dtype(np.float32)

    def _validate(self, data):
        if not np.isfinite(data).all():
            raise SvolDomainError("volume contains non-finite values")


class MaskVolume(_Grid):
    """Binary segmentation grid with values exactly 0 or 1."""

    kind = "mask"
    dtype = np.dtype(np.uint8)

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.dtype == bool:
            object.__setattr__(self, "data", raw.astype(np.uint8))
        elif raw.size and not np.isin(raw, (0, 1)).all():
            raise SvolDomainError("mask values must be exactly 0 or 1")
        super().__post_init__()

    def _validate(self, data):
        if data.size and data.max() > 1:
            raise SvolDomainError("mask values must be exactly 0 or 1")

    @property
    def count(self) -> int:
        return int(self.data.sum(dtype=np.int64))


class SoftVolume(_Grid):
    """Real-valued grid in [0, 1]: likelihood volumes and probability maps."""

    kind = "soft"
    dtype = np.dtype(np.float32)

    def _validate(self, data):
        if not np.isfinite(data).all():
            raise SvolDomainError("soft volume contains non-finite values")
        if data.min() < 0 or data.max() > 1:
            raise SvolDomainError("soft volume values must lie in [0, 1]")


_KINDS = {cls.kind: cls for cls in (Volume, MaskVolume, SoftVolume)}


# --------------------------------------------------------------------------- I/O


def write_svol(grid: _Grid, path) -> None:
    dtype_name = "u8" if grid.kind == "mask" else "f32"
    header = {
        "shape": list(grid.shape),
        "spacing_mm": list(grid.spacing_mm),
        "dtype": dtype_name,
        "order": "zyx",
        "endian": "little",
        "kind": grid.kind,
    }
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    payload = np.ascontiguousarray(grid.data, dtype=_DTYPES[dtype_name]).tobytes()
    with open(path, "wb") as fh:
        fh.write(SVOL_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def read_svol(path):
    """Read an SVOL file into a Volume, MaskVolume or SoftVolume according to its header."""
    blob = Path(path).read_bytes()
    if blob[:4] != SVOL_MAGIC:
        raise SvolMagicError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 8:
        raise SvolSizeError(f"{path}: truncated header length")
    (n,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + n:
        raise SvolSizeError(f"{path}: header length {n} exceeds file size")
    try:
        header = json.loads(blob[8 : 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: unreadable header: {exc}") from exc

    kind = header.get("kind")
    dtype_name = header.get("dtype")
    if kind not in _KINDS or dtype_name not in _DTYPES:
        raise DataError(f"{path}: unsupported kind/dtype {kind!r}/{dtype_name!r}")
    if header.get("order", "zyx") != "zyx" or header.get("endian", "little") != "little":
        raise DataError(f"{path}: only zyx order and little endian are supported")
    shape = tuple(int(s) for s in header["shape"])
    dtype = _DTYPES[dtype_name]
    expected = math.prod(shape) * dtype.itemsize
    payload = blob[8 + n :]
    if len(payload) != expected:
        raise SvolSizeError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")

    data = np.frombuffer(payload, dtype=dtype).reshape(shape)
    if kind == "mask" and data.size and data.max() > 1:
        raise SvolDomainError(f"{path}: mask contains values outside {{0, 1}}")
    if dtype_name == "f32" and not np.isfinite(data).all():
        raise SvolDomainError(f"{path}: non-finite values in payload")
    return _KINDS[kind](data, tuple(header["spacing_mm"]))


# --------------------------------------------------------------------------- geometry


def _resampled_shape(shape, spacing, target_mm):
    out = []
    for n, s in zip(shape, spacing):
        m = math.floor(n * s / target_mm + 0.5)
        if m < 1:
            raise ValueError(f"resampling to {target_mm} mm collapses an axis of {n} voxels at {s} mm")
        out.append(m)
    return tuple(out)


def _source_coords(n_out, n_in, spacing, target_mm):
    # voxel 0 stays anchored; source coordinates clamp to the last voxel
    return np.clip(np.arange(n_out) * (target_mm / spacing), 0.0, n_in - 1)


def resample_isotropic(v: Volume, target_mm: float = 1.0) -> Volume:
    """Trilinear resampling of a scalar volume to cubic voxels of `target_mm`."""
    if not target_mm > 0:
        raise ValueError("target_mm must be positive")
    new_shape = _resampled_shape(v.shape, v.spacing_mm, target_mm)
    if all(s == target_mm for s in v.spacing_mm):
        return v
    data = v.data.astype(np.float64)
    for axis in range(3):
        n_in = data.shape[axis]
        coords = _source_coords(new_shape[axis], n_in, v.spacing_mm[axis], target_mm)
        i0 = np.floor(coords).astype(np.intp)
        i1 = np.minimum(i0 + 1, n_in - 1)
        frac = coords - i0
        shape = [1, 1, 1]
        shape[axis] = -1
        frac = frac.reshape(shape)
        data = np.take(data, i0, axis=axis) * (1.0 - frac) + np.take(data, i1, axis=axis) * frac
    return Volume(data.astype(np.float32), (target_mm,) * 3)


def resample_mask(m: MaskVolume, target_mm: float = 1.0) -> MaskVolume:
    """Nearest-neighbour resampling of a binary mask (values stay in {0, 1})."""
    if not target_mm > 0:
        raise ValueError("target_mm must be positive")
    new_shape = _resampled_shape(m.shape, m.spacing_mm, target_mm)
    if all(s == target_mm for s in m.spacing_mm):
        return m
    data = m.data
    for axis in range(3):
        coords = _source_coords(new_shape[axis], data.shape[axis], m.spacing_mm[axis], target_mm)
        data = np.take(data, np.floor(coords + 0.5).astype(np.intp), axis=axis)
    return MaskVolume(data, (target_mm,) * 3)


def crop(v, lo, hi):
    """Copy the box [lo, hi) out of any grid kind."""
    lo = _as_triple(lo, "lo", int)
    hi = _as_triple(hi, "hi", int)
    for a, b, n in zip(lo, hi, v.shape):
        if not 0 <= a < b <= n:
            raise IndexError(f"crop bounds {lo}..{hi} invalid for shape {v.shape}")
    return v.with_data(v.data[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]])


def sample_subvolume(v, m: MaskVolume, size, rng_seed, extra=()):
    """Draw a window of `size` that contains at least one foreground voxel of `m`.

    A foreground voxel is picked uniformly, then a window position uniformly among
    the in-bounds windows that contain it. `extra` grids aligned with `v` are
    cropped with the same window and returned after the mask.
    """
    size = _as_triple(size, "size", int)
    if v.shape != m.shape:
        raise ValueError(f"volume shape {v.shape} does not match mask shape {m.shape}")
    if any(s < 1 or s > n for s, n in zip(size, v.shape)):
        raise ValueError(f"window {size} does not fit in shape {v.shape}")
    fg = np.flatnonzero(m.data)
    if fg.size == 0:
        raise ValueError("mask has no foreground voxel to centre a window on")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    point = np.unravel_index(fg[rng.integers(fg.size)], m.shape)
    offset = []
    for p, s, n in zip(point, size, v.shape):
        lo = max(0, int(p) - s + 1)
        hi = min(int(p), n - s)
        offset.append(int(rng.integers(lo, hi + 1)))
    offset = tuple(offset)
    upper = tuple(o + s for o, s in zip(offset, size))
    crops = [crop(g, offset, upper) for g in (v, m, *extra)]
    return (*crops, offset)


def rotate_z_180(v):
    """Rotate by 180 degrees about the z axis: reverse y and x."""
    return v.with_data(v.data[:, ::-1, ::-1])
