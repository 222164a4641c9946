import hashlib
import os

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from poseforge import CameraIntrinsics, Pose


def rotz_deg(deg):
    """Independent z-rotation oracle built from cos/sin only."""
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_rotation(seed):
    """Uniform random rotation from scipy (independent of package code)."""
    return Rotation.random(random_state=seed).as_matrix()


def random_pose(seed, z_mm=1000.0, spread_mm=100.0):
    rng = np.random.default_rng(seed)
    t = np.array([rng.uniform(-spread_mm, spread_mm), rng.uniform(-spread_mm, spread_mm), z_mm])
    return Pose(random_rotation(seed), t)


def tree_digest(root):
    """SHA-256 over relative paths and bytes of every file under root."""
    digest = hashlib.sha256()
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for fn in sorted(filenames):
            full = os.path.join(dirpath, fn)
            digest.update(os.path.relpath(full, root).encode())
            digest.update(open(full, "rb").read())
    return digest.hexdigest()


@pytest.fixture
def camera():
    return CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)
