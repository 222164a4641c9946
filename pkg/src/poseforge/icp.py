"""Point-to-point ICP refinement on top of closed-form rigid alignment.

kabsch_align solves the paired least-squares rigid problem by centroid
subtraction + SVD of the cross-covariance, with the reflection case fixed by
flipping the smallest singular direction. icp_refine alternates gated
nearest-neighbor matching with a fresh absolute Kabsch solve from the
original model points, which makes each iteration the exact minimizer of the
current correspondence set; the RMSE trace is therefore non-increasing, and
a guard stops (keeping the previous pose) if gating-induced membership
changes ever break that.

Point clouds travel as XYZ text (one ``x y z`` triple per line, mm).
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator

from ._validation import check_points
from .exceptions import DegenerateInputError, GatingFailureError
from .geometry import Pose
from .object_model import ObjectModel, _read_xyz

_COLLINEAR_REL_TOL = 1e-8
_KDTREE_CUTOFF = 512


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 50
    convergence_tol: float = 1e-6
    max_corr_dist_mm: float = 50.0

    def __post_init__(self):
        if self.max_iterations < 1 or self.convergence_tol <= 0 or self.max_corr_dist_mm <= 0:
            raise ValueError("all ICP config values must be positive")


@dataclass(frozen=True, eq=False)
class IcpResult:
    pose: Pose
    rmse_mm: float
    rmse_history: tuple
    n_iterations: int


def load_cloud(path) -> np.ndarray:
    """Read an (n, 3) point cloud from XYZ text."""
    return _read_xyz(path)


def save_cloud(points, path) -> None:
    pts = check_points(points, "points")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in pts:
            fh.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")


def kabsch_align(src, dst) -> Pose:
    """Least-squares rigid transform minimizing sum ||R s_i + t - d_i||^2."""
    src = check_points(src, "src")
    dst = check_points(dst, "dst")
    if len(src) != len(dst):
        raise ValueError(f"src has {len(src)} points but dst has {len(dst)}")
    if len(src) < 3:
        raise DegenerateInputError(f"rigid alignment needs >= 3 points, got {len(src)}")
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    a = src - cs
    b = dst - cd
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[0] <= 0.0 or sv[1] <= _COLLINEAR_REL_TOL * sv[0]:
        raise DegenerateInputError("source points are collinear; rotation is unobservable")
    H = a.T @ b
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return Pose(R, cd - R @ cs)


def _nearest(query, targets, gate):
    """Nearest target per query point inside the gate: (distances, indices)."""
    if len(targets) >= _KDTREE_CUTOFF:
        dist, idx = cKDTree(targets).query(query, distance_upper_bound=gate)
        matched = np.isfinite(dist)
        idx[~matched] = 0
        return dist, idx, matched
    D = cdist(query, targets)
    idx = D.argmin(axis=1)
    dist = D[np.arange(len(query)), idx]
    matched = dist <= gate
    return dist, idx, matched


def icp_refine(
    model: ObjectModel, observed, init: Pose, cfg: IcpConfig = IcpConfig()
) -> IcpResult:
    """Refine init by ICP between the model cloud and an observed cloud.

    Raises GatingFailureError (with the iteration index) if no transformed
    model point finds an observed neighbor within max_corr_dist_mm.
    """
    observed = check_points(observed, "observed")
    pose = init
    history = []
    prev_pose = init
    for it in range(cfg.max_iterations):
        tp = pose.apply(model.points)
        dist, idx, matched = _nearest(tp, observed, cfg.max_corr_dist_mm)
        if not np.any(matched):
            raise GatingFailureError(
                f"no correspondences within {cfg.max_corr_dist_mm} mm", iteration=it
            )
        rmse = float(np.sqrt(np.mean(dist[matched] ** 2)))
        if history and rmse > history[-1] + 1e-9:
            pose = prev_pose  # membership change increased RMSE; keep the better pose
            break
        history.append(rmse)
        if len(history) >= 2 and history[-2] - history[-1] <= cfg.convergence_tol * max(
            history[-2], 1e-300
        ):
            break
        prev_pose = pose
        pose = kabsch_align(model.points[matched], observed[idx[matched]])
    else:
        pose = prev_pose  # iteration budget spent; last evaluated pose wins
    return IcpResult(pose, history[-1], tuple(history), len(history))


class IcpRefiner(BaseEstimator):
    """Estimator-style wrapper: fit(X=observed cloud, model_points, init_pose).

    Exposes pose_, rmse_mm_, rmse_history_ and n_iterations_ after fit.
    """

    def __init__(self, max_iterations=50, convergence_tol=1e-6, max_corr_dist_mm=50.0):
        self.max_iterations = max_iterations
        self.convergence_tol = convergence_tol
        self.max_corr_dist_mm = max_corr_dist_mm

    def fit(self, X, model_points=None, init_pose=None):
        if model_points is None or init_pose is None:
            raise ValueError("model_points and init_pose are required")
        model = ObjectModel.from_points("icp-model", model_points)
        cfg = IcpConfig(
            max_iterations=self.max_iterations,
            convergence_tol=self.convergence_tol,
            max_corr_dist_mm=self.max_corr_dist_mm,
        )
        result = icp_refine(model, X, init_pose, cfg)
        self.pose_ = result.pose
        self.rmse_mm_ = result.rmse_mm
        self.rmse_history_ = result.rmse_history
        self.n_iterations_ = result.n_iterations
        return self

    def transform(self, X):
        """Apply the fitted pose to (n, 3) points."""
        return self.pose_.apply(check_points(X, "X"))
