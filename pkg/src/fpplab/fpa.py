"""Array persistence: the FPA v1 grid format and 8-bit PGM previews.

An FPA file is a short ASCII header followed by a raw little-endian payload::

    FPA 1
    dtype f32
    shape 64 64

    <H*W*4 bytes>

``f32`` is the interchange dtype. ``f64`` is accepted as well and is used for
network checkpoints, where resuming must reproduce a run bit-exactly.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import DataError, InvalidArgument

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def write_fpa(path, array, dtype: str = "f32") -> Path:
    """Write a 2-D or 3-D array as FPA v1 and return the path."""
    path = Path(path)
    arr = np.asarray(array)
    if arr.dtype == bool:
        arr = arr.astype(np.float32)
    if arr.ndim not in (2, 3):
        raise InvalidArgument(f"FPA stores 2-D or 3-D grids, got shape {arr.shape}")
    if dtype not in _DTYPES:
        raise InvalidArgument(f"unsupported FPA dtype {dtype!r}")
    header = "FPA 1\ndtype {}\nshape {}\n\n".format(dtype, " ".join(str(s) for s in arr.shape))
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(payload)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
    return path


def read_fpa(path) -> np.ndarray:
    """Read an FPA v1 file; the result is always float64."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    end = raw.find(b"\n\n")
    if end < 0:
        raise DataError(f"{path}: missing FPA header terminator")
    lines = raw[:end].decode("ascii", errors="replace").split("\n")
    if len(lines) != 3 or lines[0].strip() != "FPA 1":
        raise DataError(f"{path}: not an FPA v1 file")
    key, _, dtype = lines[1].partition(" ")
    if key != "dtype" or dtype.strip() not in _DTYPES:
        raise DataError(f"{path}: bad dtype line {lines[1]!r}")
    key, _, dims = lines[2].partition(" ")
    try:
        shape = tuple(int(d) for d in dims.split())
    except ValueError:
        shape = ()
    if key != "shape" or len(shape) not in (2, 3) or min(shape) < 0:
        raise DataError(f"{path}: bad shape line {lines[2]!r}")
    dt = _DTYPES[dtype.strip()]
    payload = raw[end + 2:]
    expected = int(np.prod(shape)) * dt.itemsize
    if len(payload) != expected:
        raise DataError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=dt).reshape(shape).astype(np.float64)


def to_uint8(array, lo: float | None = None, hi: float | None = None, mask=None) -> np.ndarray:
    """Linearly rescale to 0..255; non-finite and masked-out pixels become 0."""
    arr = np.asarray(array, dtype=np.float64)
    keep = np.isfinite(arr)
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    if not keep.any():
        return np.zeros(arr.shape, dtype=np.uint8)
    lo = float(arr[keep].min()) if lo is None else lo
    hi = float(arr[keep].max()) if hi is None else hi
    span = hi - lo if hi > lo else 1.0
    out = np.clip((arr - lo) / span * 255.0, 0, 255)
    out = np.where(keep, out, 0.0)
    return np.rint(out).astype(np.uint8)


def write_pgm(path, array, lo: float | None = None, hi: float | None = None, mask=None) -> Path:
    """Write a binary (P5) 8-bit PGM preview of a 2-D grid."""
    path = Path(path)
    img = np.asarray(array)
    if img.ndim != 2:
        raise InvalidArgument(f"PGM export needs a 2-D grid, got shape {img.shape}")
    if img.dtype != np.uint8:
        img = to_uint8(img, lo, hi, mask)
    h, w = img.shape
    try:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            fh.write(img.tobytes())
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
    return path


def read_pgm(path) -> np.ndarray:
    """Read a P5 PGM written by :func:`write_pgm`."""
    raw = Path(path).read_bytes()
    pos = 0
    for _ in range(3):
        pos = raw.index(b"\n", pos) + 1
    parts = raw[:pos].split()
    if len(parts) != 4 or parts[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PGM is supported")
    return np.frombuffer(raw[pos: pos + w * h], dtype=np.uint8).reshape(h, w)


def ensure_dir(path) -> Path:
    path = Path(path)
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create directory {path}: {exc}") from exc
    return path
