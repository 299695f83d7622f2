"""Deterministic binary container for grids, checkpoints, and datasets.

Layout: magic, format version, a canonical-JSON metadata header (sorted
keys, no timestamps, so identical inputs produce byte-identical files),
then named little-endian arrays.  A kind tag in the header keeps the
different file families apart.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"SO3HBIN\x00"
FORMAT_VERSION = 1


class IncompatibleFileError(ValueError):
    """File magic, version, or kind does not match what the reader expects."""


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def write_blob(path: str, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    header = dict(meta)
    header["kind"] = kind
    header_bytes = _canonical_json(header)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name])
            dtype = arr.dtype.newbyteorder("<")
            name_b = name.encode()
            dtype_b = dtype.str.encode()
            fh.write(struct.pack("<I", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<I", len(dtype_b)))
            fh.write(dtype_b)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype(dtype, copy=False).tobytes())


def read_blob(path: str, expect_kind: str | None = None):
    """Returns (kind, meta, arrays)."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise IncompatibleFileError(f"{path}: not a recognized container")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != FORMAT_VERSION:
            raise IncompatibleFileError(
                f"{path}: format version {version}, expected {FORMAT_VERSION}")
        meta = json.loads(fh.read(header_len))
        kind = meta.pop("kind", None)
        if expect_kind is not None and kind != expect_kind:
            raise IncompatibleFileError(
                f"{path}: kind {kind!r}, expected {expect_kind!r}")
        (n_arrays,) = struct.unpack("<I", fh.read(4))
        arrays = {}
        for _ in range(n_arrays):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode()
            (dtype_len,) = struct.unpack("<I", fh.read(4))
            dtype = np.dtype(fh.read(dtype_len).decode())
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            data = np.fromfile(fh, dtype=dtype, count=count)
            arrays[name] = data.reshape(shape)
        return kind, meta, arrays
