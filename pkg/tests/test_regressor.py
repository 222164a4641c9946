import numpy as np
import pytest

from poseforge import (
    DegenerateOutputError,
    DimensionMismatchError,
    FeatureVector,
    Pose,
    Quaternion,
    TrainConfig,
    backward,
    forward,
    init_params,
    load_checkpoint,
    loss,
    quat_to_rotmat,
    save_checkpoint,
    train,
)
from poseforge.regressor import (
    MlpParams,
    TRANSLATION_SCALE,
    _batch_loss,
    _dataset_to_arrays,
    _forward_batch,
)
from poseforge.synth import generate_regression_dataset

from conftest import random_rotation


def _tiny_params(seed=0, d=10, hidden=(16, 16)):
    return init_params(d, hidden, seed)


def _random_batch(seed, n, d):
    rng = np.random.default_rng(seed)
    batch = []
    for i in range(n):
        vis = FeatureVector(rng.normal(size=d // 2), "visual")
        sem = FeatureVector(rng.normal(size=d - d // 2), "semantic")
        pose = Pose(random_rotation(seed * 100 + i), rng.uniform(-100, 100, size=3))
        batch.append(((vis, sem), pose))
    return batch


def _flatten(grads_W, grads_b):
    return np.concatenate([g.ravel() for pair in zip(grads_W, grads_b) for g in pair])


def _param_vector(params):
    return np.concatenate(
        [a.ravel() for pair in zip(params.weights, params.biases) for a in pair]
    )


def _params_from_vector(vec, template):
    weights, biases, k = [], [], 0
    for W, b in zip(template.weights, template.biases):
        weights.append(vec[k : k + W.size].reshape(W.shape).copy())
        k += W.size
        biases.append(vec[k : k + b.size].copy())
        k += b.size
    return MlpParams(tuple(weights), tuple(biases))


class TestForward:
    def test_forced_identity_output(self):
        zero = _tiny_params()
        weights = tuple(np.zeros_like(W) for W in zero.weights)
        biases = [np.zeros_like(b) for b in zero.biases]
        biases[-1][0] = 1.0  # quaternion w bias
        params = MlpParams(weights, tuple(biases))
        rng = np.random.default_rng(0)
        for _ in range(5):
            q, t = forward(
                params,
                FeatureVector(rng.normal(size=5), "visual"),
                FeatureVector(rng.normal(size=5), "semantic"),
            )
            assert q == Quaternion.identity()
            assert np.array_equal(t, np.zeros(3))

    def test_deterministic(self):
        params = _tiny_params(3)
        vis = FeatureVector(np.arange(5.0), "visual")
        sem = FeatureVector(np.arange(5.0) / 2, "semantic")
        q1, t1 = forward(params, vis, sem)
        q2, t2 = forward(params, vis, sem)
        assert q1 == q2
        assert np.array_equal(t1, t2)

    def test_output_quaternion_unit_norm(self):
        for seed in range(20):
            params = _tiny_params(seed)
            rng = np.random.default_rng(seed)
            q, _ = forward(
                params,
                FeatureVector(rng.normal(size=5), "visual"),
                FeatureVector(rng.normal(size=5), "semantic"),
            )
            assert abs(np.linalg.norm(q.as_array()) - 1.0) <= 1e-9

    def test_dim_mismatch(self):
        params = _tiny_params()
        with pytest.raises(DimensionMismatchError):
            forward(params, FeatureVector(np.zeros(3)), FeatureVector(np.zeros(3), "semantic"))

    def test_degenerate_quaternion(self):
        params = MlpParams(
            tuple(np.zeros_like(W) for W in _tiny_params().weights),
            tuple(np.zeros_like(b) for b in _tiny_params().biases),
        )
        with pytest.raises(DegenerateOutputError):
            forward(params, FeatureVector(np.zeros(5)), FeatureVector(np.zeros(5), "semantic"))


class TestLoss:
    def test_exact_match_is_zero(self):
        R = random_rotation(1)
        gt = Pose(R, np.array([1.0, 2.0, 3.0]))
        from poseforge import rotmat_to_quat

        q = rotmat_to_quat(R)
        assert loss((q, gt.translation), gt) <= 1e-12

    def test_double_cover_invariant(self):
        from poseforge import rotmat_to_quat

        R = random_rotation(2)
        gt = Pose(R, np.zeros(3))
        q = rotmat_to_quat(R).as_array()
        assert loss((-q, np.zeros(3)), gt) <= 1e-12

    def test_orthogonal_quaternion_gives_one(self):
        gt = Pose(np.eye(3), np.zeros(3))  # q_gt = (1,0,0,0)
        q = np.array([0.0, 1.0, 0.0, 0.0])  # orthogonal unit 4-vector
        assert loss((q, np.zeros(3)), gt) == pytest.approx(1.0, abs=1e-12)

    def test_translation_term_scaling(self):
        gt = Pose(np.eye(3), np.zeros(3))
        q = np.array([1.0, 0.0, 0.0, 0.0])
        val = loss((q, np.array([10.0, 0.0, 0.0])), gt, translation_weight=1e-4)
        assert val == pytest.approx(1e-4 * 100.0, abs=1e-12)


class TestBackward:
    def test_matches_finite_differences(self):
        # central differences (h = 1e-5); relative error floored at 1e-3 so
        # round-off on near-zero entries does not dominate
        h = 1e-5
        for seed in range(3):
            params = _tiny_params(seed)
            batch = _random_batch(seed, 3, 10)
            X, Qg, Tg = _dataset_to_arrays(batch)
            analytic = _flatten(*backward(params, batch))
            theta = _param_vector(params)
            fd = np.empty_like(theta)
            for i in range(len(theta)):
                up, down = theta.copy(), theta.copy()
                up[i] += h
                down[i] -= h
                fd[i] = (
                    _batch_loss(_params_from_vector(up, params), X, Qg, Tg, 1e-4)
                    - _batch_loss(_params_from_vector(down, params), X, Qg, Tg, 1e-4)
                ) / (2 * h)
            denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-3)
            assert (np.abs(analytic - fd) / denom).max() < 1e-4

    def test_zero_loss_batch_zero_gradient(self):
        params = _tiny_params(4)
        rng = np.random.default_rng(4)
        X = rng.normal(size=(4, 10))
        y = _forward_batch(params, X)[-1]
        q = y[:, :4] / np.linalg.norm(y[:, :4], axis=1, keepdims=True)
        t = y[:, 4:7] * TRANSLATION_SCALE
        batch = []
        for i in range(4):
            pose = Pose(quat_to_rotmat(q[i]), t[i])
            batch.append(
                ((FeatureVector(X[i, :5], "visual"), FeatureVector(X[i, 5:], "semantic")), pose)
            )
        gW, gb = backward(params, batch)
        assert max(np.abs(g).max() for g in gW + gb) <= 1e-9

    def test_duplicated_batch_same_gradient(self):
        params = _tiny_params(5)
        batch = _random_batch(5, 4, 10)
        gW1, gb1 = backward(params, batch)
        gW2, gb2 = backward(params, batch + batch)
        for a, b in zip(gW1 + gb1, gW2 + gb2):
            assert np.allclose(a, b, rtol=1e-12, atol=1e-15)

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            backward(_tiny_params(), [])


class TestTrain:
    def test_memorizes_single_sample(self):
        # overfit sanity oracle; weight decay off so the optimum is loss ~ 0
        batch = _random_batch(9, 1, 10)
        cfg = TrainConfig(epochs=800, learning_rate=3e-3, weight_decay=0.0, batch_size=1,
                          seed=1, hidden_sizes=(16, 16))
        _, trace = train(cfg, batch)
        assert trace[-1] < 1e-3

    def test_zero_learning_rate_is_inert(self):
        ds = generate_regression_dataset(seed=0, n=20, dim=16)
        cfg = TrainConfig(epochs=3, learning_rate=0.0, seed=2, hidden_sizes=(16, 16))
        params, trace = train(cfg, ds)
        init = init_params(16, (16, 16), 2)
        for a, b in zip(params.weights, init.weights):
            assert np.array_equal(a, b)
        assert len(set(trace)) == 1  # flat trace: decay is lr-scaled too

    def test_deterministic(self):
        ds = generate_regression_dataset(seed=3, n=30, dim=16)
        cfg = TrainConfig(epochs=4, seed=7, hidden_sizes=(16, 16))
        p1, t1 = train(cfg, ds)
        p2, t2 = train(cfg, ds)
        assert t1 == t2
        for a, b in zip(p1.weights + p1.biases, p2.weights + p2.biases):
            assert np.array_equal(a, b)

    def test_epochs_zero_returns_init(self):
        ds = generate_regression_dataset(seed=4, n=10, dim=16)
        cfg = TrainConfig(epochs=0, seed=5, hidden_sizes=(16, 16))
        params, trace = train(cfg, ds)
        init = init_params(16, (16, 16), 5)
        assert len(trace) == 1
        for a, b in zip(params.weights + params.biases, init.weights + init.biases):
            assert np.array_equal(a, b)


class TestCheckpoint:
    def test_round_trip_f32(self, tmp_path):
        params = _tiny_params(6)
        save_checkpoint(params, tmp_path / "ckpt")
        back = load_checkpoint(tmp_path / "ckpt")
        for a, b in zip(params.weights + params.biases, back.weights + back.biases):
            assert np.array_equal(a.astype(np.float32).astype(np.float64), b)

    def test_rejects_foreign_dir(self, tmp_path):
        from poseforge import VfmtError

        with pytest.raises(VfmtError):
            load_checkpoint(tmp_path)
