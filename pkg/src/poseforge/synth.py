"""Deterministic synthetic scenes: the source of all ground truth used to
verify the solvers at desk scale.

A scene samples a ground-truth pose (rotation uniform on SO(3) via a
normalized 4-Gaussian quaternion; depth uniform in range, lateral position
chosen so the model centroid projects inside the central 80% of the image),
projects farthest-point keypoints, then corrupts: Gaussian pixel noise,
a floor(outlier_rate * visible) subset replaced by uniform in-image pixels,
and a floor(occlusion_rate * n) subset dropped entirely. It also emits an
observed point cloud (ground-truth-transformed model + Gaussian mm noise)
and a dense feature map with random unit-norm distractor descriptors and
the keypoint templates planted at the patches containing each visible
keypoint's clean projection. In high descriptor dimension the distractor
cosines concentrate near zero, so matching difficulty is controlled by the
planted-descriptor noise.

Every random draw comes from a labeled Philox stream keyed by the scene
seed, so scenes are pure functions of their configuration.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ConfigRejectedError
from .features import Correspondences, DenseFeatureMap, KeypointTemplate
from .geometry import CameraIntrinsics, Pose, Quaternion, project_points, quat_to_rotmat
from .object_model import KeypointSet, ObjectModel, sample_keypoints
from .regressor import FeatureVector
from .rng import stream

# Key of the fixed linear embedding behind every regression feature vector.
# Constant on purpose: checkpoints trained on one dataset then apply to any
# scene with the same feature dimension.
_EMBEDDING_KEY = 271828


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    camera: CameraIntrinsics = field(
        default_factory=lambda: CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
    )
    n_keypoints: int = 8
    pixel_noise_sigma: float = 0.0
    outlier_rate: float = 0.0
    occlusion_rate: float = 0.0
    depth_range_mm: tuple = (600.0, 1400.0)
    cloud_noise_sigma: float = 0.0
    feature_dim: int = 64
    feature_stride_px: float = 8.0
    descriptor_noise_sigma: float = 0.0
    clip_feature_dim: int = 32

    def __post_init__(self):
        if not (0.0 <= self.outlier_rate < 1.0 and 0.0 <= self.occlusion_rate < 1.0):
            raise ValueError("outlier/occlusion rates must lie in [0, 1)")
        if self.depth_range_mm[0] <= 0 or self.depth_range_mm[1] < self.depth_range_mm[0]:
            raise ValueError("depth range must be positive and ordered")
        if min(self.pixel_noise_sigma, self.cloud_noise_sigma, self.descriptor_noise_sigma) < 0:
            raise ValueError("noise sigmas must be >= 0")
        if self.n_keypoints < 1 or self.feature_dim < 1 or self.clip_feature_dim < 8:
            raise ValueError("counts and dimensions must be positive (clip dim >= 8)")
        if self.feature_stride_px <= 0:
            raise ValueError("feature stride must be positive")


@dataclass(frozen=True, eq=False)
class Scene:
    """Self-consistent synthetic observation of one object pose."""

    gt_pose: Pose
    keypoints: KeypointSet
    correspondences: Correspondences
    visible_indices: np.ndarray  # keypoint index of each correspondence row
    outlier_mask: np.ndarray
    observed_cloud: np.ndarray
    feature_map: DenseFeatureMap
    templates: tuple
    clip_visual: FeatureVector
    clip_semantic: FeatureVector
    config: SceneConfig


def sample_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform rotation on SO(3) from a normalized 4-Gaussian quaternion."""
    q = rng.normal(size=4)
    return quat_to_rotmat(Quaternion.from_wxyz(q))


def sample_pose(
    camera: CameraIntrinsics, centroid, depth_range_mm, rng: np.random.Generator
) -> Pose:
    """Ground-truth pose with the model centroid projecting into the central
    80% of the image at a uniform depth."""
    R = sample_rotation(rng)
    z = rng.uniform(depth_range_mm[0], depth_range_mm[1])
    u = rng.uniform(0.1 * camera.width, 0.9 * camera.width)
    v = rng.uniform(0.1 * camera.height, 0.9 * camera.height)
    target = np.array([(u - camera.cx) * z / camera.fx, (v - camera.cy) * z / camera.fy, z])
    t = target - R @ np.asarray(centroid, dtype=np.float64)
    return Pose(R, t)


def _grid_shape(camera: CameraIntrinsics, stride: float):
    return math.ceil(camera.height / stride), math.ceil(camera.width / stride)


def _patch_of(uv, stride, grid_h, grid_w):
    col = min(grid_w - 1, max(0, int(uv[0] // stride)))
    row = min(grid_h - 1, max(0, int(uv[1] // stride)))
    return row, col


def _unit(v):
    return v / np.linalg.norm(v)


def generate_scene(cfg: SceneConfig, model: ObjectModel) -> Scene:
    """Build one scene; bitwise-deterministic given (cfg, model)."""
    n = cfg.n_keypoints
    n_occluded = int(cfg.occlusion_rate * n)
    if n - n_occluded < 6:
        raise ConfigRejectedError(
            f"config leaves {n - n_occluded} visible keypoints; the pose solver needs 6"
        )

    keypoints = sample_keypoints(model, n, cfg.seed)
    gt = sample_pose(cfg.camera, model.centroid, cfg.depth_range_mm, stream(cfg.seed, "pose"))
    clean_uv = project_points(cfg.camera, gt, keypoints.positions)

    occluded = np.zeros(n, dtype=bool)
    if n_occluded:
        drop = stream(cfg.seed, "occlusion").choice(n, size=n_occluded, replace=False)
        occluded[drop] = True
    visible = np.flatnonzero(~occluded)

    uv = clean_uv[visible].copy()
    if cfg.pixel_noise_sigma > 0:
        uv += stream(cfg.seed, "pixel-noise").normal(0.0, cfg.pixel_noise_sigma, size=uv.shape)

    n_outliers = int(cfg.outlier_rate * len(visible))
    outlier_mask = np.zeros(len(visible), dtype=bool)
    if n_outliers:
        rng = stream(cfg.seed, "outliers")
        hit = rng.choice(len(visible), size=n_outliers, replace=False)
        outlier_mask[hit] = True
        uv[hit, 0] = rng.uniform(0.0, cfg.camera.width, size=n_outliers)
        uv[hit, 1] = rng.uniform(0.0, cfg.camera.height, size=n_outliers)

    correspondences = Correspondences(keypoints.positions[visible], uv)

    cloud = gt.apply(model.points)
    if cfg.cloud_noise_sigma > 0:
        cloud = cloud + stream(cfg.seed, "cloud-noise").normal(
            0.0, cfg.cloud_noise_sigma, size=cloud.shape
        )

    grid_h, grid_w = _grid_shape(cfg.camera, cfg.feature_stride_px)
    feat_rng = stream(cfg.seed, "features")
    data = feat_rng.normal(size=(grid_h, grid_w, cfg.feature_dim))
    data /= np.linalg.norm(data, axis=2, keepdims=True)
    tmpl_rng = stream(cfg.seed, "templates")
    templates = []
    for k in range(n):
        desc = _unit(tmpl_rng.normal(size=cfg.feature_dim))
        templates.append(
            KeypointTemplate(keypoints.model_indices[k], keypoints.positions[k], desc)
        )
    plant_rng = stream(cfg.seed, "plant-noise")
    for k in range(n):
        if occluded[k]:
            continue
        row, col = _patch_of(clean_uv[k], cfg.feature_stride_px, grid_h, grid_w)
        planted = templates[k].descriptor
        if cfg.descriptor_noise_sigma > 0:
            planted = _unit(
                planted + plant_rng.normal(0.0, cfg.descriptor_noise_sigma, size=cfg.feature_dim)
            )
        data[row, col] = planted
    fmap = DenseFeatureMap(
        grid_h=grid_h,
        grid_w=grid_w,
        dim=cfg.feature_dim,
        stride_px=cfg.feature_stride_px,
        origin_px=np.array([cfg.feature_stride_px / 2.0, cfg.feature_stride_px / 2.0]),
        data=data,
        image_size=(cfg.camera.width, cfg.camera.height),
        model="synthetic",
    )

    visual, semantic = _embed_pose(gt, cfg.clip_feature_dim, stream(cfg.seed, "clip-noise"))
    return Scene(
        gt_pose=gt,
        keypoints=keypoints,
        correspondences=correspondences,
        visible_indices=visible,
        outlier_mask=outlier_mask,
        observed_cloud=cloud,
        feature_map=fmap,
        templates=tuple(templates),
        clip_visual=visual,
        clip_semantic=semantic,
        config=cfg,
    )


def embedding_matrix(dim: int) -> np.ndarray:
    """The fixed (dim, 7) linear embedding behind regression features."""
    if dim < 8:
        raise ValueError("feature dimension must be >= 8")
    return stream(_EMBEDDING_KEY, "regression-embedding", dim).normal(size=(dim, 7))


def _embed_pose(pose: Pose, dim: int, noise_rng, noise_sigma: float = 0.01):
    from .geometry import rotmat_to_quat

    q = rotmat_to_quat(pose.rotation).as_array()
    v = np.concatenate([q, pose.translation / 1000.0])
    x = embedding_matrix(dim) @ v
    if noise_sigma > 0:
        x = x + noise_rng.normal(0.0, noise_sigma, size=dim)
    half = dim // 2
    return FeatureVector(x[:half], "visual"), FeatureVector(x[half:], "semantic")


def generate_regression_dataset(seed: int, n: int, dim: int = 32, noise_sigma: float = 0.01):
    """n samples of ((visual, semantic) features, Pose) for the regressor.

    Features are a fixed random linear embedding of (q_gt, t_gt/1000) plus
    Gaussian noise, split into visual/semantic halves, so a small MLP can
    provably learn the mapping. Poses cover the usual desk-scale scene range
    (x, y within +-500 mm, depth 500-1500 mm).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = stream(seed, "regression-poses")
    noise_rng = stream(seed, "regression-noise")
    samples = []
    for _ in range(n):
        R = sample_rotation(rng)
        t = np.array(
            [rng.uniform(-500.0, 500.0), rng.uniform(-500.0, 500.0), rng.uniform(500.0, 1500.0)]
        )
        pose = Pose(R, t)
        samples.append((_embed_pose(pose, dim, noise_rng, noise_sigma), pose))
    return samples


def random_blob_model(seed: int, n_points: int = 64, extent_mm: float = 80.0) -> ObjectModel:
    """An asymmetric Gaussian-blob model, handy for tests and demos."""
    rng = stream(seed, "blob-model")
    pts = rng.normal(0.0, extent_mm / 2.0, size=(n_points, 3))
    pts[:, 0] *= 1.6  # elongate so the shape has no rotational symmetry
    pts[:, 1] *= 0.9
    return ObjectModel.from_points(f"blob-{seed}", pts)


def perturbed_pose(pose: Pose, angle_deg: float, offset_mm: float, rng) -> Pose:
    """Rotate by angle_deg about a random axis and shift by offset_mm."""
    from .geometry import quat_from_axis_angle

    axis = _unit(rng.normal(size=3))
    dR = quat_to_rotmat(quat_from_axis_angle(axis, math.radians(angle_deg)))
    direction = _unit(rng.normal(size=3))
    return Pose(dR @ pose.rotation, pose.translation + offset_mm * direction)


def scene_configs(base: SceneConfig, n_scenes: int):
    """Per-scene configs with decorrelated seeds derived from the base seed."""
    seeds = stream(base.seed, "scene-seeds").integers(0, 2**63 - 1, size=n_scenes)
    return [replace(base, seed=int(s)) for s in seeds]
