"""Pose from 2D-3D correspondences.

Three layers:

- pnp_dlt: 6+ point Direct Linear Transform in intrinsics-normalized image
  coordinates with Hartley-style 3D conditioning. The linear [R|t] estimate
  is projected to the nearest rotation by SVD and cheirality is resolved by
  majority depth sign. The 6-point DLT (rather than P3P) avoids polynomial
  root handling; desk-scale scenes always supply >= 6 points. Planar scenes
  are rank-deficient for this formulation and are rejected.
- pnp_refine: Gauss-Newton on the summed squared reprojection residuals over
  a 6-dof local chart (rotation-vector increment applied on the left of R,
  plus a translation increment). Steps that do not reduce the cost are
  retried once with diagonal damping lambda = 1e-6 * trace(J^T J), then the
  current iterate is kept, so the final cost never exceeds the initial cost.
- pnp_ransac: hypothesize-and-verify with a per-iteration RNG stream derived
  from (seed, iteration index), which makes serial and parallel hypothesis
  evaluation produce the identical winner. Standard adaptive stopping: quit
  once enough iterations k satisfy (1 - w^6)^k <= 1 - confidence for the
  best inlier ratio w seen so far.
"""

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_points
from .exceptions import (
    ConsensusFailureError,
    DegenerateInputError,
    SingularSystemError,
)
from .features import Correspondences
from .geometry import CameraIntrinsics, Pose
from .rng import stream

MIN_SAMPLE = 6
_COPLANAR_REL_TOL = 1e-6
_RANK_REL_TOL = 1e-10


@dataclass(frozen=True)
class RansacConfig:
    inlier_threshold_px: float = 2.0
    max_iterations: int = 1000
    confidence: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if self.inlier_threshold_px <= 0:
            raise ValueError("inlier threshold must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class PnpResult:
    pose: Pose
    inlier_mask: np.ndarray
    mean_reproj_err_px: float


def _reprojection_errors(pose: Pose, corrs: Correspondences, camera: CameraIntrinsics):
    """Per-correspondence pixel error; +inf for points at or behind the camera."""
    pc = pose.apply(corrs.model_points)
    err = np.full(len(corrs), np.inf)
    front = pc[:, 2] > 0.0
    if np.any(front):
        z = pc[front, 2]
        u = camera.fx * pc[front, 0] / z + camera.cx
        v = camera.fy * pc[front, 1] / z + camera.cy
        duv = np.stack([u, v], axis=1) - corrs.image_points[front]
        err[front] = np.linalg.norm(duv, axis=1)
    return err


def reprojection_cost(pose: Pose, corrs: Correspondences, camera: CameraIntrinsics) -> float:
    """Sum of squared pixel residuals (inf when any point is behind)."""
    err = _reprojection_errors(pose, corrs, camera)
    if not np.all(np.isfinite(err)):
        return float("inf")
    return float(np.sum(err**2))


def _decode_projection(M: np.ndarray, scale3d: float, centroid: np.ndarray) -> Pose | None:
    """Recover a pose from a 3x4 DLT solution in conditioned coordinates."""
    B = M[:, :3]
    U, S, Vt = np.linalg.svd(B)
    if S[0] <= 0 or S[2] <= 1e-12 * S[0]:
        return None
    R = U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt)]) @ Vt
    alpha = S.mean() / scale3d  # B = alpha * scale3d * R
    t = M[:, 3] / alpha - R @ centroid
    return Pose(R, t)


def pnp_dlt(corrs: Correspondences, camera: CameraIntrinsics) -> Pose:
    """Linear pose estimate from >= 6 non-coplanar correspondences."""
    n = len(corrs)
    if n < MIN_SAMPLE:
        raise DegenerateInputError(f"DLT needs at least {MIN_SAMPLE} correspondences, got {n}")
    X = corrs.model_points
    centroid = X.mean(axis=0)
    centered = X - centroid
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[2] <= _COPLANAR_REL_TOL * sv[0]:
        raise DegenerateInputError("model points are coplanar; DLT is rank-deficient on planes")
    # Condition 3D coordinates to mean distance sqrt(3) from the origin.
    scale = float(np.linalg.norm(centered, axis=1).mean()) / math.sqrt(3.0)
    Xn = centered / scale
    x = (corrs.image_points[:, 0] - camera.cx) / camera.fx
    y = (corrs.image_points[:, 1] - camera.cy) / camera.fy

    A = np.zeros((2 * n, 12))
    A[0::2, 0:3] = Xn
    A[0::2, 3] = 1.0
    A[0::2, 8:11] = -x[:, None] * Xn
    A[0::2, 11] = -x
    A[1::2, 4:7] = Xn
    A[1::2, 7] = 1.0
    A[1::2, 8:11] = -y[:, None] * Xn
    A[1::2, 11] = -y

    _, S, Vt = np.linalg.svd(A)
    if S[-2] <= _RANK_REL_TOL * S[0]:
        raise DegenerateInputError("DLT system is rank-deficient (ambiguous solution)")
    M = Vt[-1].reshape(3, 4)

    pose = _decode_projection(M, scale, centroid)
    if pose is None:
        raise DegenerateInputError("DLT produced a degenerate projection matrix")
    depths = pose.apply(X)[:, 2]
    if np.count_nonzero(depths > 0) * 2 < n:
        pose = _decode_projection(-M, scale, centroid)
        if pose is None:
            raise DegenerateInputError("DLT produced a degenerate projection matrix")
    return pose


def _rotvec_to_matrix(w: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    K = np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
    )
    if theta < 1e-12:
        return np.eye(3) + K
    s = math.sin(theta) / theta
    c = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + s * K + c * (K @ K)


def _gn_system(pose: Pose, corrs: Correspondences, camera: CameraIntrinsics):
    """Residual vector and Jacobian for the local chart (delta_w, delta_t).

    The chart perturbs X_c = exp([dw]x) R X + t + dt, so dXc/dw = -[R X]x.
    """
    X = corrs.model_points
    RX = X @ pose.rotation.T
    pc = RX + pose.translation
    z = pc[:, 2]
    if np.any(z <= 0.0):
        raise DegenerateInputError("a correspondence is behind the camera during refinement")
    u = camera.fx * pc[:, 0] / z + camera.cx
    v = camera.fy * pc[:, 1] / z + camera.cy
    r = np.stack([u, v], axis=1) - corrs.image_points

    n = len(X)
    # d(u,v)/dXc
    duv = np.zeros((n, 2, 3))
    duv[:, 0, 0] = camera.fx / z
    duv[:, 0, 2] = -camera.fx * pc[:, 0] / z**2
    duv[:, 1, 1] = camera.fy / z
    duv[:, 1, 2] = -camera.fy * pc[:, 1] / z**2
    # dXc/dw = -skew(RX)
    skew = np.zeros((n, 3, 3))
    skew[:, 0, 1] = -RX[:, 2]
    skew[:, 0, 2] = RX[:, 1]
    skew[:, 1, 0] = RX[:, 2]
    skew[:, 1, 2] = -RX[:, 0]
    skew[:, 2, 0] = -RX[:, 1]
    skew[:, 2, 1] = RX[:, 0]
    J = np.zeros((n, 2, 6))
    J[:, :, :3] = -np.einsum("nij,njk->nik", duv, skew)
    J[:, :, 3:] = duv
    return r.reshape(-1), J.reshape(-1, 6)


def _solve_step(A: np.ndarray, b: np.ndarray, damping: float):
    if damping > 0.0:
        A = A + damping * np.eye(6)
    try:
        delta = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(delta)):
        return None
    return delta


def pnp_refine(
    init: Pose,
    corrs: Correspondences,
    camera: CameraIntrinsics,
    max_iters: int = 100,
    tol: float = 1e-12,
) -> Pose:
    """Gauss-Newton reprojection refinement; final cost <= initial cost."""
    if len(corrs) < 4:
        raise DegenerateInputError(f"refinement needs >= 4 correspondences, got {len(corrs)}")
    pose = init
    cost = reprojection_cost(pose, corrs, camera)
    for _ in range(max_iters):
        if cost == 0.0:
            break
        r, J = _gn_system(pose, corrs, camera)
        A = J.T @ J
        b = -(J.T @ r)
        delta = _solve_step(A, b, 0.0)
        if delta is None:
            delta = _solve_step(A, b, 1e-6 * float(np.trace(A)))
            if delta is None:
                raise SingularSystemError("normal equations singular even after damped retry")

        def _step(d):
            return Pose(_rotvec_to_matrix(d[:3]) @ pose.rotation, pose.translation + d[3:])

        candidate = _step(delta)
        new_cost = reprojection_cost(candidate, corrs, camera)
        if new_cost > cost:
            delta = _solve_step(A, b, 1e-6 * float(np.trace(A)))
            if delta is not None:
                candidate = _step(delta)
                new_cost = reprojection_cost(candidate, corrs, camera)
            if new_cost > cost:
                break  # no descent available; keep the current iterate
        decrease = cost - new_cost
        pose, cost = candidate, new_cost
        if decrease <= tol * max(cost, 1e-300):
            break
    return pose


def _needed_iterations(inlier_ratio: float, confidence: float, cap: int) -> int:
    w6 = inlier_ratio**MIN_SAMPLE
    if w6 >= 1.0:
        return 1
    if w6 <= 0.0:
        return cap
    k = math.log(1.0 - confidence) / math.log(1.0 - w6)
    return min(cap, max(1, math.ceil(k)))


def pnp_ransac(
    corrs: Correspondences, camera: CameraIntrinsics, cfg: RansacConfig = RansacConfig()
) -> PnpResult:
    """Robust pose from contaminated correspondences.

    Deterministic given cfg.seed. The returned mask is recomputed under the
    final refined pose, so every masked-in correspondence reprojects within
    the threshold of the returned pose.
    """
    n = len(corrs)
    if n < MIN_SAMPLE:
        raise ConsensusFailureError(f"RANSAC needs at least {MIN_SAMPLE} correspondences, got {n}")

    best = None  # (count, mean_err, iteration, pose)
    needed = cfg.max_iterations
    i = 0
    while i < needed:
        rng = stream(cfg.seed, "ransac-hypothesis", i)
        sample = rng.choice(n, size=MIN_SAMPLE, replace=False)
        i += 1
        try:
            hyp = pnp_dlt(corrs.subset(np.sort(sample)), camera)
        except DegenerateInputError:
            continue
        err = _reprojection_errors(hyp, corrs, camera)
        mask = err < cfg.inlier_threshold_px
        count = int(mask.sum())
        if count < MIN_SAMPLE:
            continue
        mean_err = float(err[mask].mean())
        key = (-count, mean_err, i - 1)
        if best is None or key < best[0]:
            best = (key, mask, hyp)
            needed = min(needed, _needed_iterations(count / n, cfg.confidence, cfg.max_iterations))
    if best is None:
        raise ConsensusFailureError(
            f"no hypothesis reached {MIN_SAMPLE} inliers in {i} iterations"
        )

    _, mask, hyp = best
    refined = pnp_refine(hyp, corrs.subset(mask), camera)
    err = _reprojection_errors(refined, corrs, camera)
    final_mask = err < cfg.inlier_threshold_px
    if int(final_mask.sum()) < MIN_SAMPLE:
        raise ConsensusFailureError("refined pose lost consensus (fewer than 6 inliers)")
    return PnpResult(refined, final_mask, float(err[final_mask].mean()))


class RansacPnpSolver(BaseEstimator):
    """Estimator-style wrapper: fit(X=model points mm, y=image points px).

    After fit, the recovered pose and inlier diagnostics are available as
    pose_, inlier_mask_ and mean_reproj_err_px_.
    """

    def __init__(
        self,
        camera: CameraIntrinsics = None,
        inlier_threshold_px: float = 2.0,
        max_iterations: int = 1000,
        confidence: float = 0.999,
        seed: int = 0,
    ):
        self.camera = camera
        self.inlier_threshold_px = inlier_threshold_px
        self.max_iterations = max_iterations
        self.confidence = confidence
        self.seed = seed

    def fit(self, X, y):
        if self.camera is None:
            raise ValueError("camera intrinsics are required")
        X = check_points(X, "X")
        y = check_points(y, "y", dim=2)
        corrs = Correspondences(X, y)
        cfg = RansacConfig(
            inlier_threshold_px=self.inlier_threshold_px,
            max_iterations=self.max_iterations,
            confidence=self.confidence,
            seed=self.seed,
        )
        result = pnp_ransac(corrs, self.camera, cfg)
        self.pose_ = result.pose
        self.inlier_mask_ = result.inlier_mask
        self.mean_reproj_err_px_ = result.mean_reproj_err_px
        return self

    def predict(self, X):
        """Project (n, 3) model points under the fitted pose."""
        from .geometry import project_points

        return project_points(self.camera, self.pose_, X)
