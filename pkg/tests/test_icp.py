import numpy as np
import pytest

from poseforge import (
    DegenerateInputError,
    GatingFailureError,
    IcpConfig,
    Pose,
    add_metric,
    compose,
    icp_refine,
    invert,
    kabsch_align,
    load_cloud,
    rotation_geodesic_deg,
    save_cloud,
    translation_error_mm,
)
from poseforge.synth import SceneConfig, generate_scene, perturbed_pose, random_blob_model
from poseforge.rng import stream

from conftest import random_pose

MODEL = random_blob_model(3, 64)


class TestKabsch:
    def test_identity_on_same_cloud(self):
        pts = np.random.default_rng(0).normal(size=(30, 3))
        pose = kabsch_align(pts, pts)
        assert np.abs(pose.rotation - np.eye(3)).max() <= 1e-12
        assert np.abs(pose.translation).max() <= 1e-12

    def test_recovers_known_transform(self):
        rng = np.random.default_rng(1)
        src = rng.normal(0, 40, size=(50, 3))
        for seed in range(10):
            truth = random_pose(seed)
            dst = truth.apply(src)
            pose = kabsch_align(src, dst)
            assert np.abs(pose.rotation - truth.rotation).max() <= 1e-9
            assert np.abs(pose.translation - truth.translation).max() <= 1e-9

    def test_two_points_rejected(self):
        with pytest.raises(DegenerateInputError):
            kabsch_align([[0, 0, 0], [1, 0, 0]], [[0, 0, 0], [1, 0, 0]])

    def test_collinear_rejected(self):
        src = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]])
        with pytest.raises(DegenerateInputError, match="collinear"):
            kabsch_align(src, src)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            kabsch_align(np.zeros((4, 3)), np.zeros((5, 3)))

    def test_reflection_never_returned(self):
        # mirrored target would tempt det(R) = -1; sign fix must prevent it
        rng = np.random.default_rng(3)
        src = rng.normal(size=(20, 3))
        dst = src * np.array([1.0, 1.0, -1.0])
        pose = kabsch_align(src, dst)
        assert np.linalg.det(pose.rotation) == pytest.approx(1.0, abs=1e-9)

    def test_optimality_spot_check(self):
        rng = np.random.default_rng(4)
        src = rng.normal(0, 30, size=(40, 3))
        dst = random_pose(11).apply(src) + rng.normal(0, 0.5, size=src.shape)
        pose = kabsch_align(src, dst)
        best = np.sum((pose.apply(src) - dst) ** 2)
        for seed in range(100):
            jitter = perturbed_pose(pose, 0.5, 0.5, stream(seed, "jiggle"))
            assert np.sum((jitter.apply(src) - dst) ** 2) >= best

    def test_rigid_invariance(self):
        rng = np.random.default_rng(5)
        src = rng.normal(0, 30, size=(40, 3))
        dst = random_pose(21).apply(src)
        base = kabsch_align(src, dst)
        world = random_pose(22)
        conj = kabsch_align(world.apply(src), world.apply(dst))
        expected = compose(world, compose(base, invert(world)))
        assert np.abs(conj.rotation - expected.rotation).max() <= 1e-9
        assert np.abs(conj.translation - expected.translation).max() <= 1e-8


class TestIcpRefine:
    def test_fixed_point(self):
        scene = generate_scene(SceneConfig(seed=1), MODEL)
        res = icp_refine(MODEL, scene.observed_cloud, scene.gt_pose)
        assert res.rmse_mm <= 1e-9
        # geodesic angle bottoms out near 1e-6 deg from arccos round-off;
        # compare the matrices directly instead
        assert np.abs(res.pose.rotation - scene.gt_pose.rotation).max() <= 1e-12
        assert np.abs(res.pose.translation - scene.gt_pose.translation).max() <= 1e-9

    def test_recovery_from_perturbation(self):
        for seed in range(10):
            scene = generate_scene(SceneConfig(seed=seed + 40), MODEL)
            init = perturbed_pose(scene.gt_pose, 10.0, 20.0, stream(seed, "icp"))
            res = icp_refine(MODEL, scene.observed_cloud, init)
            assert rotation_geodesic_deg(res.pose.rotation, scene.gt_pose.rotation) < 0.1
            assert translation_error_mm(res.pose.translation, scene.gt_pose.translation) < 0.5
            before = add_metric(MODEL, init, scene.gt_pose)
            after = add_metric(MODEL, res.pose, scene.gt_pose)
            assert after <= 0.1 * before

    def test_rmse_non_increasing(self):
        for seed in range(10):
            scene = generate_scene(SceneConfig(seed=seed + 80, cloud_noise_sigma=1.0), MODEL)
            init = perturbed_pose(scene.gt_pose, 8.0, 15.0, stream(seed, "icp2"))
            res = icp_refine(MODEL, scene.observed_cloud, init)
            hist = res.rmse_history
            assert all(hist[i + 1] <= hist[i] + 1e-9 for i in range(len(hist) - 1))

    def test_gating_failure_reports_iteration(self):
        scene = generate_scene(SceneConfig(seed=7), MODEL)
        far_init = Pose(scene.gt_pose.rotation, scene.gt_pose.translation + 5000.0)
        with pytest.raises(GatingFailureError) as err:
            icp_refine(MODEL, scene.observed_cloud, far_init)
        assert err.value.iteration == 0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            IcpConfig(max_iterations=0)
        with pytest.raises(ValueError):
            IcpConfig(max_corr_dist_mm=-1.0)

    def test_rigid_invariance(self):
        scene = generate_scene(SceneConfig(seed=9), MODEL)
        init = perturbed_pose(scene.gt_pose, 5.0, 10.0, stream(3, "icp3"))
        base = icp_refine(MODEL, scene.observed_cloud, init)
        world = random_pose(33, z_mm=0.0)
        moved = icp_refine(
            MODEL,
            world.apply(scene.observed_cloud),
            compose(world, init),
        )
        expected = compose(world, base.pose)
        assert np.abs(moved.pose.rotation - expected.rotation).max() <= 1e-9
        assert np.abs(moved.pose.translation - expected.translation).max() <= 1e-6


class TestCloudIo:
    def test_round_trip(self, tmp_path):
        pts = np.random.default_rng(0).normal(0, 100, size=(25, 3))
        path = tmp_path / "cloud.xyz"
        save_cloud(pts, path)
        back = load_cloud(path)
        assert np.array_equal(back, pts)  # repr round-trips float64 exactly
