"""RPRM1 checkpoint files: a flat sequence of named float64 tensors.

Layout (little-endian): magic ``RPRM1``, then until EOF, per tensor:
u32 name length, UTF-8 name, u32 rank, u64 per dimension, f64 data (C order).
"""
import struct

import numpy as np

from .corpus import _Reader
from .errors import FormatError

MAGIC = b"RPRM1"


def tensors_to_bytes(tensors):
    parts = [MAGIC]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        b = name.encode("utf-8")
        parts.append(struct.pack("<I", len(b)) + b)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).astype("<f8").tobytes())
    return b"".join(parts)


def tensors_from_bytes(buf):
    r = _Reader(buf, "checkpoint")
    if bytes(r.take(len(MAGIC))) != MAGIC:
        raise FormatError("not a RPRM1 checkpoint")
    out = {}
    while not r.at_end():
        name = r.string()
        (rank,) = r.unpack("<I")
        shape = r.unpack(f"<{rank}Q") if rank else ()
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64)
        out[name] = data.reshape(shape)
    return out


def save_tensors(tensors, path):
    with open(path, "wb") as fh:
        fh.write(tensors_to_bytes(tensors))


def load_tensors(path):
    with open(path, "rb") as fh:
        return tensors_from_bytes(fh.read())


def merge_into(path, tensors):
    """Add or replace tensors in an existing checkpoint (creating it if absent)."""
    try:
        existing = load_tensors(path)
    except FileNotFoundError:
        existing = {}
    existing.update(tensors)
    save_tensors(existing, path)


def subset(tensors, prefix):
    return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
