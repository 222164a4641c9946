"""Writer for the VFMT tensor format the pose toolkit consumes.

Kept independent of the consumer package on purpose: the two sides share a
file format, not code. Layout (little-endian): magic ``VFMT``, u32 version
= 1, u32 dtype = 1 (float32), u32 rank, rank x u64 dims, row-major float32
payload; metadata goes in a JSON sidecar ``<name>.meta.json``.
"""

import json
import os
import struct

import numpy as np

MAGIC = b"VFMT"
VERSION = 1
DTYPE_F32 = 1


def write_tensor(path, array) -> None:
    arr = np.ascontiguousarray(array, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise ValueError("refusing to write non-finite tensor values")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, DTYPE_F32, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def write_sidecar(tensor_path, meta: dict) -> None:
    root, _ = os.path.splitext(tensor_path)
    with open(root + ".meta.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
