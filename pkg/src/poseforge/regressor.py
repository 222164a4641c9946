"""Direct pose regression: a small MLP maps a concatenated visual+semantic
feature vector to a quaternion and a translation, trained with AdamW.

Architecture: D -> hidden -> hidden -> 7 with tanh hidden activations
(default hidden widths 256). The first four outputs are a raw quaternion,
normalized downstream; the last three are the translation in raw units that
are scaled by TRANSLATION_SCALE into millimeters, so that mm-magnitude
targets stay reachable under small learning rates.

Loss: (1 - <q_pred, q_gt>^2) + translation_weight * ||t_pred - t_gt||^2.
The rotation term is smooth and invariant to the quaternion double cover;
canonical sign is applied only at evaluation time, never in the loss path.

Gradients are analytic (reverse-mode through the tanh layers and the
quaternion normalization) and are validated against central finite
differences in the test suite.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import vfmt
from ._validation import as_finite_array
from .exceptions import (
    DegenerateOutputError,
    DimensionMismatchError,
    NumericError,
    VfmtError,
)
from .geometry import Pose, Quaternion, rotmat_to_quat
from .rng import stream

TRANSLATION_SCALE = 1000.0

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class FeatureVector:
    """A feature vector tagged with its role (visual or semantic)."""

    values: np.ndarray
    role: str = "visual"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ValueError("feature vector contains non-finite values")
        if self.role not in ("visual", "semantic"):
            raise ValueError(f"role must be visual or semantic, got {self.role!r}")
        object.__setattr__(self, "values", v)


@dataclass
class MlpParams:
    """Per-layer weights (fan_in, fan_out) and biases (fan_out,)."""

    weights: tuple
    biases: tuple

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.ndim != 1 or W.shape[1] != b.shape[0]:
                raise ValueError(f"layer {i} shapes are inconsistent")
            if i > 0 and self.weights[i - 1].shape[1] != W.shape[0]:
                raise ValueError(f"layer {i} input does not match layer {i-1} output")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite parameters")
        if self.weights[-1].shape[1] != 7:
            raise ValueError("output layer must have 7 units (4 quaternion + 3 translation)")

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def hidden_sizes(self):
        return tuple(W.shape[1] for W in self.weights[:-1])

    def copy(self):
        return MlpParams(
            tuple(W.copy() for W in self.weights), tuple(b.copy() for b in self.biases)
        )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-4
    weight_decay: float = 1e-2
    batch_size: int = 16
    seed: int = 0
    translation_weight: float = 1e-4
    hidden_sizes: tuple = (256, 256)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0 or self.translation_weight <= 0:
            raise ValueError("rates and weights must be non-negative (lambda_t positive)")


def init_params(input_dim, hidden_sizes=(256, 256), seed=0) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization from seed."""
    dims = [int(input_dim)] + [int(h) for h in hidden_sizes] + [7]
    weights, biases = [], []
    for i in range(len(dims) - 1):
        rng = stream(seed, "mlp-init", i)
        bound = 1.0 / np.sqrt(dims[i])
        weights.append(rng.uniform(-bound, bound, size=(dims[i], dims[i + 1])))
        biases.append(rng.uniform(-bound, bound, size=dims[i + 1]))
    return MlpParams(tuple(weights), tuple(biases))


def _forward_batch(params: MlpParams, X: np.ndarray):
    """Hidden activations plus raw output; tanh on all but the last layer."""
    acts = [X]
    a = X
    n_layers = len(params.weights)
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W + b
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite values at layer {i} pre-activation")
        a = z if i == n_layers - 1 else np.tanh(z)
        acts.append(a)
    return acts


def _split_output(y: np.ndarray):
    """Raw output -> (normalized quaternion, translation mm, cache)."""
    q_raw = y[:, :4]
    t = y[:, 4:7] * TRANSLATION_SCALE
    norms = np.linalg.norm(q_raw, axis=1)
    if np.any(norms < 1e-8):
        raise DegenerateOutputError("raw quaternion norm below 1e-8")
    q = q_raw / norms[:, None]
    return q, t, norms


def forward(params: MlpParams, visual: FeatureVector, semantic: FeatureVector):
    """Single-sample prediction -> (Quaternion, translation mm).

    Canonical sign is applied here (evaluation time); training uses the raw
    normalized quaternion internally.
    """
    x = np.concatenate([visual.values, semantic.values])
    if x.shape[0] != params.input_dim:
        raise DimensionMismatchError(
            f"concatenated feature dim {x.shape[0]} != network input {params.input_dim}"
        )
    y = _forward_batch(params, x[None, :])[-1]
    q, t, _ = _split_output(y)
    return Quaternion.from_wxyz(q[0]), t[0]


def loss(pred, gt: Pose, translation_weight: float = 1e-4) -> float:
    """(1 - <q_pred, q_gt>^2) + lambda_t * ||t_pred - t_gt||^2 for one sample."""
    q_pred, t_pred = pred
    q = q_pred.as_array() if isinstance(q_pred, Quaternion) else as_finite_array(q_pred, "q", (4,))
    q = q / np.linalg.norm(q)
    q_gt = rotmat_to_quat(gt.rotation).as_array()
    t_pred = as_finite_array(t_pred, "t", (3,))
    s = float(q @ q_gt)
    dt = t_pred - gt.translation
    return (1.0 - s * s) + translation_weight * float(dt @ dt)


def _batch_loss(params: MlpParams, X, Q, T, translation_weight: float) -> float:
    """Mean loss over a batch (no weight-decay term)."""
    y = _forward_batch(params, X)[-1]
    q, t, _ = _split_output(y)
    s = np.sum(q * Q, axis=1)
    dt = t - T
    per_sample = (1.0 - s**2) + translation_weight * np.sum(dt**2, axis=1)
    return float(per_sample.mean())


def _batch_gradients(params: MlpParams, X, Q, T, translation_weight: float):
    """Analytic gradient of the mean batch loss w.r.t. every parameter."""
    acts = _forward_batch(params, X)
    y = acts[-1]
    q, t, norms = _split_output(y)
    B = len(X)

    s = np.sum(q * Q, axis=1)
    # dL/dq_raw through normalization: (I - q q^T)/||raw|| applied to -2 s q_gt
    dq = (-2.0 * s)[:, None] * (Q - s[:, None] * q) / norms[:, None]
    dt = 2.0 * translation_weight * (t - T) * TRANSLATION_SCALE
    dy = np.concatenate([dq, dt], axis=1) / B

    grads_W = [None] * len(params.weights)
    grads_b = [None] * len(params.biases)
    delta = dy
    for i in range(len(params.weights) - 1, -1, -1):
        a_prev = acts[i]
        if not np.all(np.isfinite(delta)):
            raise NumericError(f"non-finite gradient at layer {i}")
        grads_W[i] = a_prev.T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (1.0 - acts[i] ** 2)
    return grads_W, grads_b


def _dataset_to_arrays(dataset, input_dim=None):
    X, Qg, Tg = [], [], []
    for (visual, semantic), pose in dataset:
        x = np.concatenate([visual.values, semantic.values])
        X.append(x)
        Qg.append(rotmat_to_quat(pose.rotation).as_array())
        Tg.append(pose.translation)
    X = np.asarray(X)
    if input_dim is not None and X.shape[1] != input_dim:
        raise DimensionMismatchError(
            f"dataset feature dim {X.shape[1]} != network input {input_dim}"
        )
    return X, np.asarray(Qg), np.asarray(Tg)


def backward(params: MlpParams, batch, translation_weight: float = 1e-4):
    """Gradient of the mean loss over a batch of ((visual, semantic), Pose).

    Weight decay is an optimizer concern and is excluded here.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    X, Qg, Tg = _dataset_to_arrays(batch, params.input_dim)
    return _batch_gradients(params, X, Qg, Tg, translation_weight)


def train(config: TrainConfig, dataset):
    """AdamW training; deterministic given (config, dataset).

    Returns (params, loss_trace) where loss_trace[0] is the full-dataset mean
    loss at initialization and loss_trace[e] the value after epoch e.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    X, Qg, Tg = _dataset_to_arrays(dataset)
    return _train_arrays(config, X, Qg, Tg)


def _train_arrays(config: TrainConfig, X, Qg, Tg):
    n, dim = X.shape
    params = init_params(dim, config.hidden_sizes, config.seed)
    m_W = [np.zeros_like(W) for W in params.weights]
    v_W = [np.zeros_like(W) for W in params.weights]
    m_b = [np.zeros_like(b) for b in params.biases]
    v_b = [np.zeros_like(b) for b in params.biases]
    weights = [W.copy() for W in params.weights]
    biases = [b.copy() for b in params.biases]

    def current():
        return MlpParams(tuple(weights), tuple(biases))

    trace = [_batch_loss(current(), X, Qg, Tg, config.translation_weight)]
    step = 0
    for epoch in range(config.epochs):
        order = stream(config.seed, "shuffle", epoch).permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            try:
                gW, gb = _batch_gradients(
                    current(), X[idx], Qg[idx], Tg[idx], config.translation_weight
                )
            except (NumericError, DegenerateOutputError) as exc:
                raise NumericError(
                    f"epoch {epoch}, batch {start // config.batch_size}: {exc}"
                ) from exc
            step += 1
            c1 = 1.0 - ADAM_BETA1**step
            c2 = 1.0 - ADAM_BETA2**step
            for i in range(len(weights)):
                for p, g, m, v in ((weights[i], gW[i], m_W[i], v_W[i]),
                                   (biases[i], gb[i], m_b[i], v_b[i])):
                    m *= ADAM_BETA1
                    m += (1.0 - ADAM_BETA1) * g
                    v *= ADAM_BETA2
                    v += (1.0 - ADAM_BETA2) * g * g
                    p -= config.learning_rate * (
                        (m / c1) / (np.sqrt(v / c2) + ADAM_EPS) + config.weight_decay * p
                    )
        trace.append(_batch_loss(current(), X, Qg, Tg, config.translation_weight))
    return current(), trace


def save_checkpoint(params: MlpParams, out_dir) -> None:
    """One VFMT tensor per layer ([W; b] stacked, bias last row) + sidecar."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    names = []
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        name = f"layer{i}"
        names.append(name)
        vfmt.write_tensor(os.path.join(out_dir, name + ".vfmt"), np.vstack([W, b[None, :]]))
    meta = {
        "format": "poseforge-mlp-v1",
        "layers": names,
        "input_dim": int(params.input_dim),
        "hidden_sizes": [int(h) for h in params.hidden_sizes],
    }
    vfmt.write_sidecar(os.path.join(out_dir, "checkpoint.vfmt"), meta)


def load_checkpoint(out_dir) -> MlpParams:
    import os

    meta = vfmt.read_sidecar(os.path.join(out_dir, "checkpoint.vfmt"))
    if meta.get("format") != "poseforge-mlp-v1":
        raise VfmtError(f"{out_dir}: not a poseforge MLP checkpoint")
    weights, biases = [], []
    for name in meta["layers"]:
        stacked = vfmt.read_tensor(os.path.join(out_dir, name + ".vfmt")).astype(np.float64)
        weights.append(stacked[:-1])
        biases.append(stacked[-1])
    return MlpParams(tuple(weights), tuple(biases))


class PoseRegressor(BaseEstimator):
    """sklearn-style wrapper around the MLP pose head.

    fit(X, y): X is (n, D) concatenated visual+semantic features; y is (n, 7)
    rows of [qw, qx, qy, qz, tx, ty, tz] (translation in mm). predict returns
    the same layout with unit, canonical-sign quaternions.
    """

    def __init__(
        self,
        epochs=100,
        learning_rate=1e-4,
        weight_decay=1e-2,
        batch_size=16,
        seed=0,
        translation_weight=1e-4,
        hidden_sizes=(256, 256),
    ):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.seed = seed
        self.translation_weight = translation_weight
        self.hidden_sizes = hidden_sizes

    def _config(self):
        return TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            seed=self.seed,
            translation_weight=self.translation_weight,
            hidden_sizes=tuple(self.hidden_sizes),
        )

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 2 or y.ndim != 2 or y.shape[1] != 7 or len(X) != len(y):
            raise ValueError("X must be (n, D) and y (n, 7) with matching n")
        Qg = y[:, :4] / np.linalg.norm(y[:, :4], axis=1, keepdims=True)
        self.params_, self.loss_trace_ = _train_arrays(self._config(), X, Qg, y[:, 4:7])
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.params_.input_dim:
            raise DimensionMismatchError(
                f"X must be (n, {self.params_.input_dim}), got {X.shape}"
            )
        y = _forward_batch(self.params_, X)[-1]
        q, t, _ = _split_output(y)
        # canonical sign at evaluation time
        flip = np.ones(len(q))
        for i, row in enumerate(q):
            for c in row:
                if c > 0:
                    break
                if c < 0:
                    flip[i] = -1.0
                    break
        return np.concatenate([q * flip[:, None], t], axis=1)
