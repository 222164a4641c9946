"""Dense-feature front end: patch-descriptor grids, template matching, and
correspondence assembly for the pose solver.

Matching is cosine similarity between a template descriptor and every
L2-normalized patch descriptor; the best patch wins and the detection lands
on the patch-center lattice (no sub-patch localization is claimed). Cosine
rather than L2 keeps matching invariant to per-patch descriptor scale,
which suits self-supervised features whose norms vary.
"""

from dataclasses import dataclass

import numpy as np

from . import vfmt
from ._validation import as_finite_array, readonly
from .exceptions import DimensionMismatchError, InsufficientCorrespondencesError, VfmtError
from .object_model import KeypointSet


@dataclass(frozen=True, eq=False)
class DenseFeatureMap:
    """grid_h x grid_w patch descriptors of dimension dim.

    stride_px is the pixel pitch between patch centers; origin_px is the
    pixel position of the center of patch (row 0, col 0).
    """

    grid_h: int
    grid_w: int
    dim: int
    stride_px: float
    origin_px: np.ndarray
    data: np.ndarray
    image_size: tuple | None = None
    model: str = ""

    def __post_init__(self):
        if self.dim <= 0 or self.stride_px <= 0:
            raise ValueError("dim and stride_px must be positive")
        data = as_finite_array(self.data, "data", shape=(self.grid_h, self.grid_w, self.dim))
        object.__setattr__(self, "data", readonly(data))
        object.__setattr__(
            self, "origin_px", readonly(as_finite_array(self.origin_px, "origin_px", shape=(2,)))
        )

    def patch_center(self, row, col) -> np.ndarray:
        return self.origin_px + self.stride_px * np.array([col, row], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class KeypointTemplate:
    """A keypoint's 3D position plus its unit-norm reference descriptor."""

    model_index: int
    position: np.ndarray
    descriptor: np.ndarray

    def __post_init__(self):
        pos = as_finite_array(self.position, "position", shape=(3,))
        desc = np.asarray(self.descriptor, dtype=np.float64)
        if desc.ndim != 1:
            raise ValueError("descriptor must be a vector")
        if not np.all(np.isfinite(desc)):
            raise ValueError("descriptor contains non-finite values")
        norm = float(np.linalg.norm(desc))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"descriptor must be unit L2 norm, got {norm:.12f}")
        object.__setattr__(self, "position", readonly(pos))
        object.__setattr__(self, "descriptor", readonly(desc))


@dataclass(frozen=True)
class Detection:
    """A matched keypoint: pixel location on the patch lattice + cosine score."""

    image_point: np.ndarray
    score: float

    def __post_init__(self):
        object.__setattr__(
            self, "image_point", readonly(as_finite_array(self.image_point, "image_point", (2,)))
        )
        if not -1.0 - 1e-9 <= self.score <= 1.0 + 1e-9:
            raise ValueError("cosine score out of [-1, 1]")


@dataclass(frozen=True, eq=False)
class Correspondences:
    """Paired 3D model points (mm) and 2D image points (px)."""

    model_points: np.ndarray
    image_points: np.ndarray

    def __post_init__(self):
        mp = np.asarray(self.model_points, dtype=np.float64).reshape(-1, 3)
        ip = np.asarray(self.image_points, dtype=np.float64).reshape(-1, 2)
        if len(mp) != len(ip):
            raise ValueError("model and image point counts differ")
        if not (np.all(np.isfinite(mp)) and np.all(np.isfinite(ip))):
            raise ValueError("correspondences contain non-finite values")
        object.__setattr__(self, "model_points", readonly(mp))
        object.__setattr__(self, "image_points", readonly(ip))

    def __len__(self):
        return len(self.model_points)

    def subset(self, indices) -> "Correspondences":
        return Correspondences(self.model_points[indices], self.image_points[indices])


def load_feature_map(path) -> DenseFeatureMap:
    """Load a VFMT tensor plus its mandatory sidecar as a feature map."""
    data = vfmt.read_tensor(path)
    if data.ndim != 3:
        raise VfmtError(f"{path}: feature map must be rank 3, got rank {data.ndim}")
    meta = vfmt.read_sidecar(path)
    for key in ("stride_px", "origin_px"):
        if key not in meta:
            raise VfmtError(f"{vfmt.sidecar_path(path)}: missing key {key!r}")
    image_size = tuple(meta["image_size"]) if "image_size" in meta else None
    h, w, d = data.shape
    return DenseFeatureMap(
        grid_h=h,
        grid_w=w,
        dim=d,
        stride_px=float(meta["stride_px"]),
        origin_px=np.asarray(meta["origin_px"], dtype=np.float64),
        data=data.astype(np.float64),
        image_size=image_size,
        model=str(meta.get("model", "")),
    )


def save_feature_map(fmap: DenseFeatureMap, path) -> None:
    vfmt.write_tensor(path, fmap.data)
    meta = {
        "stride_px": fmap.stride_px,
        "origin_px": [float(v) for v in fmap.origin_px],
        "model": fmap.model,
    }
    if fmap.image_size is not None:
        meta["image_size"] = [int(v) for v in fmap.image_size]
    vfmt.write_sidecar(path, meta)


def match_keypoints(fmap: DenseFeatureMap, templates, min_score=0.3):
    """Best-patch cosine match per template.

    Returns a list aligned with templates: a Detection, or None when the best
    score falls below min_score. Ties break toward the lowest row-major patch
    index. Zero-norm patches never match.
    """
    if not templates:
        return []
    dim = templates[0].descriptor.shape[0]
    if dim != fmap.dim:
        raise DimensionMismatchError(
            f"template dim {dim} != feature map dim {fmap.dim}"
        )
    flat = fmap.data.reshape(-1, fmap.dim)
    norms = np.linalg.norm(flat, axis=1)
    ok = norms > 0.0
    unit = np.zeros_like(flat)
    unit[ok] = flat[ok] / norms[ok, None]
    T = np.stack([t.descriptor for t in templates])
    if T.shape[1] != fmap.dim:
        raise DimensionMismatchError("templates disagree on descriptor dimension")
    sims = T @ unit.T  # (n_templates, n_patches)
    sims[:, ~ok] = -np.inf
    out = []
    for row in sims:
        best = int(np.argmax(row))
        score = float(row[best])
        if not np.isfinite(score) or score < min_score:
            out.append(None)
            continue
        r, c = divmod(best, fmap.grid_w)
        out.append(Detection(fmap.patch_center(r, c), min(1.0, max(-1.0, score))))
    return out


def build_correspondences(detections, keypoints: KeypointSet) -> Correspondences:
    """Pair each present detection with its keypoint's 3D position.

    Absent detections are dropped; fewer than 6 survivors (the pose solver
    minimum) raises InsufficientCorrespondencesError.
    """
    if len(detections) != len(keypoints):
        raise ValueError("detections and keypoints must be aligned by template index")
    model_pts = []
    image_pts = []
    for det, pos in zip(detections, keypoints.positions):
        if det is None:
            continue
        model_pts.append(pos)
        image_pts.append(det.image_point)
    if len(model_pts) < 6:
        raise InsufficientCorrespondencesError(
            f"only {len(model_pts)} correspondences survived; need at least 6"
        )
    return Correspondences(np.array(model_pts), np.array(image_pts))
