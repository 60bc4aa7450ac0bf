"""Binary named-tensor container for model checkpoints.

Layout (all integers little-endian):

    magic  b"KTIR1"
    per tensor, in sorted name order:
        u32   name length in bytes
        bytes name (UTF-8)
        u32   rank
        u32   dims[rank]
        f64   payload, row-major
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor

MAGIC = b"KTIR1"


def save_tensors(path, named: dict[str, np.ndarray | Tensor]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name in sorted(named):
            arr = named[name]
            data = arr.data if isinstance(arr, Tensor) else np.asarray(arr)
            data = np.ascontiguousarray(data, dtype="<f8")
            raw_name = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw_name)))
            fh.write(raw_name)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    out: dict[str, np.ndarray] = {}
    pos = len(MAGIC)
    while pos < len(blob):
        (name_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos)
        pos += 8 * count
        out[name] = arr.reshape(dims).astype(np.float64)
    return out
