"""Dense 3D/4D scalar fields and their raw on-disk representation.

A volume is stored as a pair of files::

    <name>.f32raw   little-endian float32, x fastest, one block per channel
    <name>.vhdr     JSON sidecar (dims, voxel_size_mm, channels, dtype, labels)

In memory the data array has shape ``(channels, nx, ny, nz)``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DATA_SUFFIX = ".f32raw"
HEADER_SUFFIX = ".vhdr"
DTYPE_TAG = "f32le"
_AXES = {"x": 0, "y": 1, "z": 2}


class VolumeFormatError(ValueError):
    """Raised when a volume file pair is missing, inconsistent or malformed."""


@dataclass(frozen=True)
class Volume:
    """Immutable multi-channel 3D scalar field.

    Parameters
    ----------
    data : array_like
        Shape ``(channels, nx, ny, nz)``; a 3D array is treated as one channel.
    voxel_size : tuple of float
        Voxel edge lengths in mm.
    labels : tuple of str, optional
        One semantic label per channel (e.g. ``"b=1000,dir=3,rep=0"``).
    """

    data: np.ndarray
    voxel_size: tuple = (1.0, 1.0, 1.0)
    labels: tuple = field(default=())

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 3:
            arr = arr[np.newaxis]
        if arr.ndim != 4:
            raise ValueError(f"volume data must be 3D or 4D, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite data")
        arr = np.array(arr, copy=True)
        arr.setflags(write=False)
        vs = tuple(float(v) for v in self.voxel_size)
        if len(vs) != 3 or min(vs) <= 0:
            raise ValueError(f"voxel sizes must be three positive numbers, got {vs}")
        labels = tuple(str(s) for s in self.labels) if self.labels else tuple("" for _ in range(arr.shape[0]))
        if len(labels) != arr.shape[0]:
            raise ValueError(f"{len(labels)} labels for {arr.shape[0]} channels")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "voxel_size", vs)
        object.__setattr__(self, "labels", labels)

    @property
    def dims(self) -> tuple:
        return tuple(int(n) for n in self.data.shape[1:])

    @property
    def channels(self) -> int:
        return int(self.data.shape[0])

    def channel(self, index: int) -> np.ndarray:
        return self.data[index]

    def with_data(self, data, labels=None) -> "Volume":
        """New volume on the same grid with different data."""
        return Volume(data, self.voxel_size, self.labels if labels is None else labels)

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.voxel_size == other.voxel_size
            and self.labels == other.labels
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


class Mask(Volume):
    """Single-channel volume with values in [0, 1] (fuzzy or binary)."""

    def __post_init__(self):
        super().__post_init__()
        if self.channels != 1:
            raise ValueError("a mask has exactly one channel")
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise ValueError("mask values must lie in [0, 1]")

    @property
    def values(self) -> np.ndarray:
        return self.data[0]

    def binary(self, threshold: float) -> "Mask":
        return Mask((self.values > threshold).astype(np.float64), self.voxel_size)


def _pair(path) -> tuple:
    p = Path(path)
    if p.suffix in (DATA_SUFFIX, HEADER_SUFFIX):
        p = p.with_suffix("")
    return p.with_name(p.name + DATA_SUFFIX), p.with_name(p.name + HEADER_SUFFIX)


def save_volume(v: Volume, path) -> None:
    """Write ``v`` as ``<path>.f32raw`` + ``<path>.vhdr``.

    Data are quantized to float32; volumes whose values are float32
    representable round-trip bit-exactly.
    """
    with np.errstate(over="ignore"):
        data32 = np.asarray(v.data, dtype="<f4")
    if not np.all(np.isfinite(data32)):
        raise ValueError("non-finite data (overflow converting to float32)")
    data_path, header_path = _pair(path)
    data_path.parent.mkdir(parents=True, exist_ok=True)
    # channel-major blocks, x fastest within a block
    raw = np.ascontiguousarray(data32.transpose(0, 3, 2, 1))
    header = {
        "dims": list(v.dims),
        "voxel_size_mm": list(v.voxel_size),
        "channels": v.channels,
        "dtype": DTYPE_TAG,
        "byte_order": "little",
        "labels": list(v.labels),
    }
    with open(data_path, "wb") as fh:
        fh.write(raw.tobytes())
    with open(header_path, "w") as fh:
        json.dump(header, fh, indent=1)
        fh.write("\n")


def read_header(path) -> dict:
    _, header_path = _pair(path)
    if not header_path.exists():
        raise FileNotFoundError(f"missing header {header_path}")
    try:
        with open(header_path) as fh:
            header = json.load(fh)
    except json.JSONDecodeError as exc:
        raise VolumeFormatError(f"{header_path}: unparseable header ({exc})") from exc
    for key in ("dims", "voxel_size_mm", "channels", "dtype"):
        if key not in header:
            raise VolumeFormatError(f"{header_path}: missing field '{key}'")
    if header["dtype"] != DTYPE_TAG:
        raise VolumeFormatError(f"{header_path}: unknown dtype '{header['dtype']}'")
    return header


def load_volume(path) -> Volume:
    """Read a volume written by :func:`save_volume`."""
    data_path, header_path = _pair(path)
    header = read_header(path)
    if not data_path.exists():
        raise FileNotFoundError(f"missing data file {data_path}")
    nx, ny, nz = (int(n) for n in header["dims"])
    channels = int(header["channels"])
    expected = nx * ny * nz * channels
    nbytes = os.path.getsize(data_path)
    if nbytes != 4 * expected:
        raise VolumeFormatError(
            f"size mismatch: header implies {expected} floats, file holds {nbytes / 4:g}"
        )
    flat = np.fromfile(data_path, dtype="<f4")
    data = flat.reshape(channels, nz, ny, nx).transpose(0, 3, 2, 1).astype(np.float32)
    labels = header.get("labels") or ()
    return Volume(data, tuple(header["voxel_size_mm"]), tuple(labels))


def slice_extract(v: Volume, axis: str, index: int) -> Volume:
    """Return the plane ``index`` along ``axis`` as a volume with nz == 1.

    The two in-plane axes keep their original order, so a z-slice of an
    (nx, ny, nz) volume has dims (nx, ny, 1).
    """
    if axis not in _AXES:
        raise ValueError(f"axis must be one of x, y, z; got {axis!r}")
    ax = _AXES[axis]
    n = v.dims[ax]
    if not 0 <= index < n:
        raise IndexError(f"slice index {index} out of range for axis {axis} of size {n}")
    plane = np.take(v.data, index, axis=ax + 1)
    plane = plane[..., np.newaxis]
    in_plane = [s for i, s in enumerate(v.voxel_size) if i != ax]
    return Volume(plane, (in_plane[0], in_plane[1], v.voxel_size[ax]), v.labels)


def stack_slices(planes, axis: str = "z") -> Volume:
    """Inverse of taking every :func:`slice_extract` along ``axis``."""
    ax = _AXES[axis]
    first = planes[0]
    arr = np.stack([p.data[..., 0] for p in planes], axis=ax + 1)
    vs = list(first.voxel_size[:2])
    vs.insert(ax, first.voxel_size[2])
    return Volume(arr, tuple(vs), first.labels)


def parse_label(label: str) -> dict:
    """Parse ``"b=1000,dir=3,rep=0"`` into a dict of ints/floats/strings."""
    out = {}
    for part in filter(None, label.split(",")):
        key, _, value = part.partition("=")
        try:
            num = float(value)
            out[key.strip()] = int(num) if num.is_integer() else num
        except ValueError:
            out[key.strip()] = value.strip()
    return out


def channel_bvalues(v: Volume) -> list:
    """b-value of each channel, read from the ``b=`` label entries."""
    bvals = []
    for label in v.labels:
        info = parse_label(label)
        if "b" not in info:
            raise ValueError(f"channel label {label!r} carries no b-value")
        bvals.append(info["b"])
    return bvals
