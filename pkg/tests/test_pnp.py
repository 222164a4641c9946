import numpy as np
import pytest

from poseforge import (
    ConsensusFailureError,
    Correspondences,
    DegenerateInputError,
    Pose,
    RansacConfig,
    pnp_dlt,
    pnp_ransac,
    pnp_refine,
    project_points,
    rotation_geodesic_deg,
    translation_error_mm,
)
from poseforge.pnp import reprojection_cost
from poseforge.synth import SceneConfig, generate_scene, perturbed_pose, random_blob_model
from poseforge.rng import stream

MODEL = random_blob_model(3, 64)


def _clean_scene(seed, n_keypoints=8, **kwargs):
    cfg = SceneConfig(seed=seed, n_keypoints=n_keypoints, **kwargs)
    return generate_scene(cfg, MODEL), cfg.camera


class TestDlt:
    def test_exact_recovery(self):
        scene, camera = _clean_scene(0)
        pose = pnp_dlt(scene.correspondences, camera)
        assert rotation_geodesic_deg(pose.rotation, scene.gt_pose.rotation) < 1e-4
        assert translation_error_mm(pose.translation, scene.gt_pose.translation) < 1e-3

    def test_too_few_points(self, camera):
        corrs = Correspondences(np.random.default_rng(0).normal(size=(5, 3)), np.zeros((5, 2)))
        with pytest.raises(DegenerateInputError, match="at least 6"):
            pnp_dlt(corrs, camera)

    def test_coplanar_rejected(self, camera):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-50, 50, size=(8, 3))
        pts[:, 2] = 0.0
        pose = Pose(np.eye(3), np.array([0.0, 0.0, 800.0]))
        uv = project_points(camera, pose, pts)
        with pytest.raises(DegenerateInputError, match="coplanar"):
            pnp_dlt(Correspondences(pts, uv), camera)

    def test_duplicate_points_rank_deficient(self, camera):
        rng = np.random.default_rng(2)
        pts = rng.uniform(-50, 50, size=(6, 3))
        pts[1] = pts[0]
        pose = Pose(np.eye(3), np.array([0.0, 0.0, 800.0]))
        uv = project_points(camera, pose, pts)
        with pytest.raises(DegenerateInputError):
            pnp_dlt(Correspondences(pts, uv), camera)

    def test_cheirality(self):
        # the recovered pose must place the points in front of the camera
        for seed in range(10):
            scene, camera = _clean_scene(seed)
            pose = pnp_dlt(scene.correspondences, camera)
            assert np.all(pose.apply(scene.correspondences.model_points)[:, 2] > 0)


class TestRefine:
    def test_fixed_point_at_ground_truth(self):
        scene, camera = _clean_scene(3)
        out = pnp_refine(scene.gt_pose, scene.correspondences, camera)
        assert np.array_equal(out.rotation, scene.gt_pose.rotation)
        assert np.array_equal(out.translation, scene.gt_pose.translation)

    def test_converges_from_perturbation(self):
        for seed in range(10):
            scene, camera = _clean_scene(seed + 10, n_keypoints=10)
            init = perturbed_pose(scene.gt_pose, 5.0, 30.0, stream(seed, "perturb"))
            out = pnp_refine(init, scene.correspondences, camera)
            assert rotation_geodesic_deg(out.rotation, scene.gt_pose.rotation) < 1e-4
            assert translation_error_mm(out.translation, scene.gt_pose.translation) < 1e-3

    def test_cost_never_increases(self):
        for seed in range(10):
            scene, camera = _clean_scene(seed + 30, n_keypoints=12, pixel_noise_sigma=1.0)
            init = perturbed_pose(scene.gt_pose, 3.0, 15.0, stream(seed, "p2"))
            before = reprojection_cost(init, scene.correspondences, camera)
            out = pnp_refine(init, scene.correspondences, camera)
            after = reprojection_cost(out, scene.correspondences, camera)
            assert after <= before

    def test_too_few(self, camera):
        corrs = Correspondences(np.random.default_rng(0).normal(size=(3, 3)), np.zeros((3, 2)))
        with pytest.raises(DegenerateInputError):
            pnp_refine(Pose.identity(), corrs, camera)


class TestRansac:
    def test_clean_scene_all_inliers(self):
        scene, camera = _clean_scene(5, n_keypoints=20)
        res = pnp_ransac(scene.correspondences, camera, RansacConfig(seed=1))
        assert res.inlier_mask.all()
        assert rotation_geodesic_deg(res.pose.rotation, scene.gt_pose.rotation) < 1e-3
        assert res.mean_reproj_err_px < 1e-6

    def test_forty_percent_outliers(self):
        hits = 0
        for seed in range(25):
            cfg = SceneConfig(seed=seed + 100, n_keypoints=20, outlier_rate=0.4)
            scene = generate_scene(cfg, MODEL)
            assert scene.outlier_mask.sum() == 8  # floor(0.4 * 20)
            res = pnp_ransac(scene.correspondences, cfg.camera, RansacConfig(seed=seed))
            ok = (
                np.array_equal(res.inlier_mask, ~scene.outlier_mask)
                and rotation_geodesic_deg(res.pose.rotation, scene.gt_pose.rotation) < 1.0
                and translation_error_mm(res.pose.translation, scene.gt_pose.translation) < 5.0
            )
            hits += ok
        assert hits >= 24

    def test_consistent_wrong_pose_is_returned(self, camera):
        # all six correspondences projected under one (wrong) pose: RANSAC
        # cannot distinguish and returns that pose; documents the contract
        rng = np.random.default_rng(7)
        pts = rng.uniform(-60, 60, size=(6, 3))
        wrong = Pose(np.eye(3), np.array([20.0, -10.0, 900.0]))
        uv = project_points(camera, wrong, pts)
        res = pnp_ransac(Correspondences(pts, uv), camera, RansacConfig(seed=0))
        assert rotation_geodesic_deg(res.pose.rotation, wrong.rotation) < 1e-3
        assert translation_error_mm(res.pose.translation, wrong.translation) < 1e-2

    def test_consensus_failure(self, camera):
        rng = np.random.default_rng(8)
        pts = rng.uniform(-60, 60, size=(8, 3))
        uv = rng.uniform(0, 640, size=(8, 2))  # unrelated pixels
        with pytest.raises(ConsensusFailureError):
            pnp_ransac(Correspondences(pts, uv), camera, RansacConfig(seed=0, max_iterations=50))

    def test_deterministic(self):
        cfg = SceneConfig(seed=500, n_keypoints=20, outlier_rate=0.3)
        scene = generate_scene(cfg, MODEL)
        a = pnp_ransac(scene.correspondences, cfg.camera, RansacConfig(seed=9))
        b = pnp_ransac(scene.correspondences, cfg.camera, RansacConfig(seed=9))
        assert np.array_equal(a.pose.rotation, b.pose.rotation)
        assert np.array_equal(a.pose.translation, b.pose.translation)
        assert np.array_equal(a.inlier_mask, b.inlier_mask)
        assert a.mean_reproj_err_px == b.mean_reproj_err_px

    def test_inlier_mask_sound(self):
        from poseforge.pnp import _reprojection_errors

        for seed in range(10):
            cfg = SceneConfig(seed=seed + 300, n_keypoints=16, outlier_rate=0.25)
            scene = generate_scene(cfg, MODEL)
            cfg_r = RansacConfig(seed=seed)
            res = pnp_ransac(scene.correspondences, cfg.camera, cfg_r)
            err = _reprojection_errors(res.pose, scene.correspondences, cfg.camera)
            assert np.all(err[res.inlier_mask] < cfg_r.inlier_threshold_px)
            assert res.inlier_mask.sum() >= 6

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RansacConfig(inlier_threshold_px=0.0)
        with pytest.raises(ValueError):
            RansacConfig(confidence=1.0)
        with pytest.raises(ValueError):
            RansacConfig(max_iterations=0)
