"""Input validation helpers shared by the public API surface."""

import numpy as np

from .exceptions import InvalidRotationError

ROTATION_TOL = 1e-9


def as_finite_array(x, name, shape=None, dtype=np.float64):
    """Coerce to an ndarray of the given dtype/shape and require finiteness."""
    arr = np.asarray(x, dtype=dtype)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_points(x, name, dim=3, min_rows=1):
    """Validate an (n, dim) finite point array with at least min_rows rows."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"{name} must have shape (n, {dim}), got {arr.shape}")
    if arr.shape[0] < min_rows:
        raise ValueError(f"{name} needs at least {min_rows} rows, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_rotation(R, tol=ROTATION_TOL):
    """Validate a proper rotation: orthonormal within tol, det(R) = 1 ± tol."""
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise InvalidRotationError(f"rotation must be 3x3, got {R.shape}")
    if not np.all(np.isfinite(R)):
        raise InvalidRotationError("rotation contains non-finite values")
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err > tol:
        raise InvalidRotationError(f"matrix is not orthonormal (max |R^T R - I| = {err:.3e})")
    det = np.linalg.det(R)
    if abs(det - 1.0) > tol:
        raise InvalidRotationError(f"matrix determinant is {det:.12f}, not +1")
    return R


def readonly(arr):
    """Return a C-contiguous, non-writeable float64 copy (safe to share)."""
    out = np.array(arr, dtype=np.float64, order="C", copy=True)
    out.flags.writeable = False
    return out
