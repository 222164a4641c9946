"""SO(3)/SE(3) primitives: quaternions, rotation matrices, rigid poses,
pinhole projection, and the pose-distance functions everything else uses.

Conventions
-----------
- Quaternions are (w, x, y, z) with unit norm and canonical sign: w >= 0,
  and if w == 0 the first nonzero of (x, y, z) is positive. q and -q encode
  the same rotation; canonicalization removes that ambiguity from equality
  tests.
- Rotation matrices are 3x3 row-major, applied on the left: p' = R @ p.
- A Pose maps model coordinates to camera coordinates: p_cam = R @ p + t.
- All lengths are millimeters. Image coordinates are pixels with origin at
  the top-left corner, u rightward, v downward.
- Rotation-matrix validity tolerance is 1e-9 in max-norm: tight enough to
  catch drift, loose enough for accumulated float64 round-off.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._validation import as_finite_array, check_points, check_rotation, readonly
from .exceptions import BehindCameraError, DegenerateInputError


@dataclass(frozen=True)
class Quaternion:
    """Unit quaternion (w, x, y, z), canonical sign enforced at construction."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        comps = (self.w, self.x, self.y, self.z)
        if not all(math.isfinite(c) for c in comps):
            raise DegenerateInputError("quaternion has non-finite components")
        norm = math.sqrt(sum(c * c for c in comps))
        if abs(norm - 1.0) > 1e-9:
            raise DegenerateInputError(
                f"quaternion norm is {norm:.12f}; construct via Quaternion.from_wxyz to normalize"
            )
        if not _is_canonical(comps):
            raise DegenerateInputError(
                "quaternion sign is not canonical; use Quaternion.from_wxyz"
            )

    @classmethod
    def from_wxyz(cls, wxyz) -> "Quaternion":
        """Normalize and canonicalize a raw 4-vector (w, x, y, z)."""
        q = as_finite_array(wxyz, "quaternion", shape=(4,))
        norm = float(np.linalg.norm(q))
        if norm < 1e-12:
            raise DegenerateInputError("all-zero quaternion cannot be normalized")
        q = q / norm
        q = _canonical_sign(q)
        return cls(float(q[0]), float(q[1]), float(q[2]), float(q[3]))

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])


def _is_canonical(q) -> bool:
    for c in q:
        if c > 0.0:
            return True
        if c < 0.0:
            return False
    return True  # exact zero quaternion never reaches here


def _canonical_sign(q: np.ndarray) -> np.ndarray:
    return q if _is_canonical(q) else -q


def quat_from_axis_angle(axis, angle_rad: float) -> Quaternion:
    """Quaternion for a rotation of angle_rad about the given axis."""
    axis = as_finite_array(axis, "axis", shape=(3,))
    norm = float(np.linalg.norm(axis))
    if norm < 1e-12:
        raise DegenerateInputError("rotation axis has zero length")
    half = 0.5 * angle_rad
    v = math.sin(half) / norm * axis
    return Quaternion.from_wxyz([math.cos(half), v[0], v[1], v[2]])


def quat_to_rotmat(q) -> np.ndarray:
    """Rotation matrix of a quaternion; q and -q map to the same matrix.

    Accepts a Quaternion or any finite 4-vector (w, x, y, z), which is
    normalized internally.
    """
    if isinstance(q, Quaternion):
        arr = q.as_array()
    else:
        arr = as_finite_array(q, "quaternion", shape=(4,))
    nsq = float(arr @ arr)
    if nsq < 1e-24:
        raise DegenerateInputError("all-zero quaternion has no rotation")
    w, x, y, z = arr / math.sqrt(nsq)
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    return np.array(
        [
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ]
    )


def rotmat_to_quat(R) -> Quaternion:
    """Canonical-sign quaternion of a rotation matrix (Shepperd's method)."""
    R = check_rotation(R)
    # Pick the numerically largest of the four candidate pivots.
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    candidates = [tr, R[0, 0], R[1, 1], R[2, 2]]
    case = int(np.argmax(candidates))
    if case == 0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif case == 1:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif case == 2:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    return Quaternion.from_wxyz(q)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform [R|t]: p_cam = rotation @ p_model + translation (mm)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = check_rotation(self.rotation)
        t = as_finite_array(self.translation, "translation", shape=(3,))
        object.__setattr__(self, "rotation", readonly(R))
        object.__setattr__(self, "translation", readonly(t))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quat(cls, q, translation) -> "Pose":
        return cls(quat_to_rotmat(q), translation)

    def apply(self, points) -> np.ndarray:
        """Transform one point (3,) or a stack (n, 3) into the camera frame."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            return self.rotation @ pts + self.translation
        return pts @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 form."""
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M


def compose(a: Pose, b: Pose) -> Pose:
    """Pose applying b then a: R = R_a R_b, t = R_a t_b + t_a."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(p: Pose) -> Pose:
    """Inverse transform: R' = R^T, t' = -R^T t."""
    Rt = p.rotation.T
    return Pose(Rt, -(Rt @ p.translation))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera: focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


def project(camera: CameraIntrinsics, pose: Pose, point) -> np.ndarray:
    """Project one 3D model point (mm) to pixel coordinates.

    Raises BehindCameraError when the camera-frame depth is <= 0.
    """
    pc = pose.apply(as_finite_array(point, "point", shape=(3,)))
    if pc[2] <= 0.0:
        raise BehindCameraError(f"point has camera-frame depth {pc[2]:.3f} mm")
    return np.array(
        [camera.fx * pc[0] / pc[2] + camera.cx, camera.fy * pc[1] / pc[2] + camera.cy]
    )


def project_points(camera: CameraIntrinsics, pose: Pose, points) -> np.ndarray:
    """Vectorized projection of (n, 3) model points; raises if any is behind."""
    pts = check_points(points, "points")
    pc = pose.apply(pts)
    if np.any(pc[:, 2] <= 0.0):
        raise BehindCameraError("at least one point has non-positive depth")
    uv = np.empty((len(pts), 2))
    uv[:, 0] = camera.fx * pc[:, 0] / pc[:, 2] + camera.cx
    uv[:, 1] = camera.fy * pc[:, 1] / pc[:, 2] + camera.cy
    return uv


def rotation_geodesic_deg(a, b) -> float:
    """Geodesic angle between two rotations in degrees, in [0, 180].

    theta = arccos(clamp((trace(a^T b) - 1) / 2, -1, 1)); the clamp guards
    against trace round-off producing NaN near 0 and 180 degrees.
    """
    a = check_rotation(a)
    b = check_rotation(b)
    c = (np.trace(a.T @ b) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def translation_error_mm(a, b) -> float:
    """Euclidean distance between two translations, millimeters."""
    a = as_finite_array(a, "a", shape=(3,))
    b = as_finite_array(b, "b", shape=(3,))
    return float(np.linalg.norm(a - b))
