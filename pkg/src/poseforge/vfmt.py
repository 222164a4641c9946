"""VFMT binary tensor files.

Layout (little-endian): magic ``VFMT`` (4 bytes), version u32 = 1, dtype
u32 = 1 (float32), rank u32, rank x u64 dims, then the row-major float32
payload. A tensor file ``X.vfmt`` may carry a JSON sidecar ``X.meta.json``.
Round trips are bit-exact for every finite float32 payload.
"""

import json
import os
import struct

import numpy as np

from .exceptions import VfmtError

MAGIC = b"VFMT"
VERSION = 1
DTYPE_F32 = 1


def write_tensor(path, array) -> None:
    """Write an array as float32 VFMT (values are cast if needed)."""
    arr = np.ascontiguousarray(array, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise VfmtError("refusing to write non-finite tensor values")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, DTYPE_F32, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    """Read a VFMT file; raises VfmtError with a distinct message per defect."""
    if not os.path.isfile(path):
        raise VfmtError(f"tensor file not found: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise VfmtError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 16:
        raise VfmtError(f"{path}: truncated header")
    version, dtype, rank = struct.unpack_from("<III", blob, 4)
    if version != VERSION:
        raise VfmtError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise VfmtError(f"{path}: unsupported dtype code {dtype}")
    header_end = 16 + 8 * rank
    if len(blob) < header_end:
        raise VfmtError(f"{path}: truncated dimension list")
    dims = struct.unpack_from(f"<{rank}Q", blob, 16)
    count = 1
    for d in dims:
        count *= d
    expected = header_end + 4 * count
    if len(blob) != expected:
        raise VfmtError(
            f"{path}: payload length mismatch (have {len(blob) - header_end} bytes, "
            f"shape {dims} needs {4 * count})"
        )
    arr = np.frombuffer(blob, dtype="<f4", offset=header_end).reshape(dims).copy()
    if not np.all(np.isfinite(arr)):
        raise VfmtError(f"{path}: tensor contains non-finite values")
    return arr


def sidecar_path(tensor_path) -> str:
    root, _ = os.path.splitext(tensor_path)
    return root + ".meta.json"


def write_sidecar(tensor_path, meta: dict) -> None:
    with open(sidecar_path(tensor_path), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_sidecar(tensor_path) -> dict:
    path = sidecar_path(tensor_path)
    if not os.path.isfile(path):
        raise VfmtError(f"sidecar not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise VfmtError(f"{path}: invalid JSON sidecar: {exc}") from None
