"""CNT1 binary tensor container and JSON manifest sidecars.

Layout (little-endian)::

    magic  b"CNT1"      4 bytes
    dtype  uint8        1 = float32, 2 = float64
    ndim   uint8
    pad    2 bytes      reserved, zero
    dims   ndim x uint64
    payload             row-major scalars
"""

import json
import os
import struct

import numpy as np

MAGIC = b"CNT1"
FLOAT32 = 1
FLOAT64 = 2

_DTYPES = {FLOAT32: np.dtype("<f4"), FLOAT64: np.dtype("<f8")}
_HEADER = struct.Struct("<4sBB2x")
_MAX_DIM = 2**64 - 1


class TensorFormatError(ValueError):
    """Raised when a file does not hold a valid CNT1 tensor."""


def write_tensor(path, data, dtype=FLOAT64):
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported dtype code {dtype!r}")
    arr = np.asarray(data)
    if arr.ndim == 0:
        raise ValueError("tensor must have at least one dimension")
    if arr.ndim > 255:
        raise ValueError("too many dimensions for CNT1 header")
    if any(d == 0 for d in arr.shape):
        raise ValueError(f"zero-length dimension in shape {arr.shape}")
    if any(d > _MAX_DIM for d in arr.shape):
        raise OverflowError("dimension does not fit in 64 bits")

    payload = np.ascontiguousarray(arr, dtype=_DTYPES[dtype])
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, dtype, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(payload.tobytes(order="C"))


def read_tensor(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise TensorFormatError(f"{path}: truncated header")
    magic, dtype, ndim = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {magic!r}")
    if dtype not in _DTYPES:
        raise TensorFormatError(f"{path}: unsupported dtype code {dtype}")
    offset = _HEADER.size + 8 * ndim
    if len(raw) < offset:
        raise TensorFormatError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{ndim}Q", raw, _HEADER.size)
    np_dtype = _DTYPES[dtype]
    expected = int(np.prod(dims, dtype=object)) * np_dtype.itemsize
    if len(raw) - offset != expected:
        raise TensorFormatError(
            f"{path}: payload is {len(raw) - offset} bytes, expected {expected}"
        )
    arr = np.frombuffer(raw, dtype=np_dtype, offset=offset).reshape(dims)
    # native-endian, writable copy
    return arr.astype(np_dtype.newbyteorder("="))


def manifest_path(path):
    root, _ = os.path.splitext(os.fspath(path))
    return root + ".manifest.json"


def write_manifest(path, manifest):
    """Write ``manifest`` as the sidecar of the artifact at ``path``."""
    target = manifest_path(path)
    with open(target, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    return target


def read_manifest(path):
    with open(manifest_path(path), encoding="utf-8") as fh:
        return json.load(fh)


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_pgm(path, grid, clip_sigma=3.0):
    """8-bit binary PGM preview; values clamped to mean +- clip_sigma * std."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError("PGM preview needs a 2-D grid")
    mean, std = grid.mean(), grid.std()
    lo, hi = mean - clip_sigma * std, mean + clip_sigma * std
    if hi <= lo:
        pixels = np.full(grid.shape, 128, dtype=np.uint8)
    else:
        scaled = (np.clip(grid, lo, hi) - lo) / (hi - lo)
        pixels = np.rint(scaled * 255).astype(np.uint8)
    h, w = grid.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
