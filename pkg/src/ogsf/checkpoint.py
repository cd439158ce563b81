"""Binary parameter checkpoints.

Layout (little-endian): magic "OGSW", format version u32, tensor count u32;
per tensor: name length u16 + UTF-8 name, rank u8, dims as u32s, then the
values as 32-bit floats in row-major order.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"OGSW"
VERSION = 1


class FormatError(ValueError):
    """A binary file does not match its expected layout."""


def save_checkpoint(path, params):
    """Write named tensors (a {name: Tensor-or-ndarray} map) to `path`."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(params)))
        for name, tensor in params.items():
            data = np.asarray(getattr(tensor, "data", tensor), dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.astype("<f4").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back as a {name: float64 ndarray} map."""
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    if blob[:4] != MAGIC:
        raise FormatError(f"checkpoint: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version, count = _unpack(view, 4, "<II")
    if version != VERSION:
        raise FormatError(f"checkpoint: unsupported version {version}")
    offset = 12
    out = {}
    for _ in range(count):
        (name_len,) = _unpack(view, offset, "<H")
        offset += 2
        name = _take(view, offset, name_len).tobytes().decode("utf-8")
        offset += name_len
        (rank,) = _unpack(view, offset, "<B")
        offset += 1
        dims = _unpack(view, offset, f"<{rank}I")
        offset += 4 * rank
        n_bytes = 4 * int(np.prod(dims, dtype=np.int64))
        raw = _take(view, offset, n_bytes)
        offset += n_bytes
        out[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(dims)
    return out


def _unpack(view, offset, fmt):
    size = struct.calcsize(fmt)
    if offset + size > len(view):
        raise FormatError(f"checkpoint: truncated, expected {offset + size} bytes, have {len(view)}")
    return struct.unpack_from(fmt, view, offset)


def _take(view, offset, size):
    if offset + size > len(view):
        raise FormatError(f"checkpoint: truncated, expected {offset + size} bytes, have {len(view)}")
    return view[offset:offset + size]
