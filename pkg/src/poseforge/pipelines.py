"""End-to-end pipeline runners and scene (de)serialization.

Three pipelines over the same scene inputs:

- dino:   match_keypoints -> build_correspondences -> pnp_ransac -> icp_refine
- clip:   regressor forward pass on the scene's feature-vector pair
- hybrid: clip coarse pose used as the ICP initialization (coarse and
          refined results are both reported)

Scene directories are self-contained: ground-truth pose JSON,
correspondences CSV, observed cloud XYZ, the dense feature map and keypoint
templates as VFMT tensors, and the clip-branch feature vectors.
"""

import csv
import io
import json
import os
from dataclasses import dataclass

import numpy as np

from . import vfmt
from .exceptions import PoseForgeError, VfmtError
from .features import (
    Correspondences,
    DenseFeatureMap,
    KeypointTemplate,
    build_correspondences,
    load_feature_map,
    match_keypoints,
    save_feature_map,
)
from .geometry import CameraIntrinsics, Pose, quat_to_rotmat
from .icp import IcpConfig, icp_refine, load_cloud, save_cloud
from .metrics import evaluate_scene
from .object_model import KeypointSet, ObjectModel
from .pnp import RansacConfig, pnp_ransac
from .regressor import FeatureVector, MlpParams, forward
from .synth import Scene


@dataclass(frozen=True, eq=False)
class PipelineScene:
    """The subset of a Scene that pipelines consume, in memory or from disk."""

    scene_id: str
    gt_pose: Pose
    keypoints: KeypointSet
    feature_map: DenseFeatureMap
    templates: tuple
    observed_cloud: np.ndarray
    clip_visual: FeatureVector
    clip_semantic: FeatureVector

    @classmethod
    def from_scene(cls, scene: Scene, scene_id: str) -> "PipelineScene":
        return cls(
            scene_id=scene_id,
            gt_pose=scene.gt_pose,
            keypoints=scene.keypoints,
            feature_map=scene.feature_map,
            templates=scene.templates,
            observed_cloud=scene.observed_cloud,
            clip_visual=scene.clip_visual,
            clip_semantic=scene.clip_semantic,
        )


@dataclass(frozen=True)
class SceneOutcome:
    """Per-scene pipeline result: records on success, a reason on failure."""

    scene_id: str
    records: tuple = ()  # (label, EvalRecord) pairs
    error: str = ""


def run_dino(
    scene: PipelineScene,
    model: ObjectModel,
    camera: CameraIntrinsics,
    ransac_cfg: RansacConfig,
    icp_cfg: IcpConfig,
    min_score: float = 0.3,
) -> Pose:
    detections = match_keypoints(scene.feature_map, list(scene.templates), min_score)
    corrs = build_correspondences(detections, scene.keypoints)
    coarse = pnp_ransac(corrs, camera, ransac_cfg).pose
    return icp_refine(model, scene.observed_cloud, coarse, icp_cfg).pose


def run_clip(scene: PipelineScene, params: MlpParams) -> Pose:
    q, t = forward(params, scene.clip_visual, scene.clip_semantic)
    return Pose(quat_to_rotmat(q), t)


def run_hybrid(
    scene: PipelineScene, model: ObjectModel, params: MlpParams, icp_cfg: IcpConfig
):
    """Returns (refined_pose, coarse_pose)."""
    coarse = run_clip(scene, params)
    refined = icp_refine(model, scene.observed_cloud, coarse, icp_cfg).pose
    return refined, coarse


def evaluate_pipeline_scene(
    kind: str,
    scene: PipelineScene,
    model: ObjectModel,
    camera: CameraIntrinsics,
    *,
    ransac_cfg: RansacConfig = None,
    icp_cfg: IcpConfig = None,
    params: MlpParams = None,
    min_score: float = 0.3,
    method_name: str = "",
) -> SceneOutcome:
    """Run one pipeline on one scene; failures are captured, not raised."""
    try:
        if kind == "dino":
            pose = run_dino(scene, model, camera, ransac_cfg, icp_cfg, min_score)
            records = ((method_name, evaluate_scene(model, pose, scene.gt_pose, scene.scene_id)),)
        elif kind == "clip":
            pose = run_clip(scene, params)
            records = ((method_name, evaluate_scene(model, pose, scene.gt_pose, scene.scene_id)),)
        elif kind == "hybrid":
            refined, coarse = run_hybrid(scene, model, params, icp_cfg)
            records = (
                (method_name, evaluate_scene(model, refined, scene.gt_pose, scene.scene_id)),
                (
                    method_name + " (coarse)",
                    evaluate_scene(model, coarse, scene.gt_pose, scene.scene_id),
                ),
            )
        else:
            raise ValueError(f"unknown pipeline kind {kind!r}")
        return SceneOutcome(scene.scene_id, records=records)
    except (PoseForgeError, ValueError) as exc:
        return SceneOutcome(scene.scene_id, error=f"{type(exc).__name__}: {exc}")


# ---------------------------------------------------------------------------
# Scene directory format


def _pose_to_json(pose: Pose) -> dict:
    return {
        "R": [[float(v) for v in row] for row in pose.rotation],
        "t": [float(v) for v in pose.translation],
    }


def _pose_from_json(obj) -> Pose:
    return Pose(np.asarray(obj["R"], dtype=np.float64), np.asarray(obj["t"], dtype=np.float64))


def save_pose_json(pose: Pose, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_pose_to_json(pose), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_pose_json(path) -> Pose:
    with open(path, "r", encoding="utf-8") as fh:
        return _pose_from_json(json.load(fh))


def export_scene(scene: Scene, out_dir) -> None:
    """Write one scene directory (deterministic bytes)."""
    os.makedirs(out_dir, exist_ok=True)
    save_pose_json(scene.gt_pose, os.path.join(out_dir, "gt_pose.json"))

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["kp_index", "X", "Y", "Z", "u", "v", "is_outlier"])
    for row, kp_idx in enumerate(scene.visible_indices):
        X, Y, Z = (float(v) for v in scene.correspondences.model_points[row])
        u, v = (float(v) for v in scene.correspondences.image_points[row])
        writer.writerow(
            [int(kp_idx), repr(X), repr(Y), repr(Z), repr(u), repr(v),
             int(scene.outlier_mask[row])]
        )
    with open(os.path.join(out_dir, "correspondences.csv"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write(buf.getvalue())

    save_cloud(scene.observed_cloud, os.path.join(out_dir, "cloud.xyz"))
    save_feature_map(scene.feature_map, os.path.join(out_dir, "features.vfmt"))

    T = np.stack([t.descriptor for t in scene.templates])
    tpath = os.path.join(out_dir, "templates.vfmt")
    vfmt.write_tensor(tpath, T)
    vfmt.write_sidecar(
        tpath,
        {
            "model_indices": [int(i) for i in scene.keypoints.model_indices],
            "positions": [[float(v) for v in p] for p in scene.keypoints.positions],
        },
    )

    for name, vec in (("clip_visual", scene.clip_visual), ("clip_semantic", scene.clip_semantic)):
        path = os.path.join(out_dir, name + ".vfmt")
        vfmt.write_tensor(path, vec.values.reshape(1, 1, -1))
        vfmt.write_sidecar(path, {"role": vec.role})


def load_scene_dir(scene_dir, scene_id=None) -> PipelineScene:
    """Load an exported scene directory back into pipeline form."""
    if scene_id is None:
        scene_id = os.path.basename(os.path.normpath(scene_dir))
    gt = load_pose_json(os.path.join(scene_dir, "gt_pose.json"))
    fmap = load_feature_map(os.path.join(scene_dir, "features.vfmt"))

    tpath = os.path.join(scene_dir, "templates.vfmt")
    T = vfmt.read_tensor(tpath).astype(np.float64)
    meta = vfmt.read_sidecar(tpath)
    if T.ndim != 2 or len(meta.get("model_indices", ())) != len(T):
        raise VfmtError(f"{tpath}: templates tensor/sidecar mismatch")
    positions = np.asarray(meta["positions"], dtype=np.float64)
    keypoints = KeypointSet(tuple(meta["model_indices"]), positions)
    templates = tuple(
        KeypointTemplate(idx, pos, desc / np.linalg.norm(desc))
        for idx, pos, desc in zip(keypoints.model_indices, positions, T)
    )

    cloud = load_cloud(os.path.join(scene_dir, "cloud.xyz"))
    clip = {}
    for name in ("clip_visual", "clip_semantic"):
        arr = vfmt.read_tensor(os.path.join(scene_dir, name + ".vfmt"))
        clip[name] = FeatureVector(arr.reshape(-1).astype(np.float64), name.split("_")[1])
    return PipelineScene(
        scene_id=scene_id,
        gt_pose=gt,
        keypoints=keypoints,
        feature_map=fmap,
        templates=templates,
        observed_cloud=cloud,
        clip_visual=clip["clip_visual"],
        clip_semantic=clip["clip_semantic"],
    )


def load_scene_correspondences(scene_dir) -> tuple:
    """Read the exported correspondences CSV -> (Correspondences, outlier mask)."""
    path = os.path.join(scene_dir, "correspondences.csv")
    with open(path, "r", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["kp_index", "X", "Y", "Z", "u", "v", "is_outlier"]:
        raise PoseForgeError(f"{path}: bad correspondences header")
    model_pts, image_pts, outliers = [], [], []
    for row in rows[1:]:
        model_pts.append([float(row[1]), float(row[2]), float(row[3])])
        image_pts.append([float(row[4]), float(row[5])])
        outliers.append(bool(int(row[6])))
    return Correspondences(np.array(model_pts), np.array(image_pts)), np.array(outliers)
