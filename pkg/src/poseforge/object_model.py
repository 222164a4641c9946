"""3D object models: loading (ASCII PLY subset / XYZ text), diameter,
farthest-point keypoint sampling, and the symmetry metadata ADD-S consumers
read.

File formats
------------
ASCII PLY subset: header must declare ``format ascii 1.0`` and an
``element vertex N`` with float/double properties including x, y, z; faces
and extra vertex properties are ignored. Binary PLY is rejected.

XYZ text: one ``x y z`` triple per line (mm); blank lines and lines starting
with ``#`` are skipped.
"""

import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from ._validation import check_points, readonly
from .exceptions import ModelParseError


@dataclass(frozen=True, eq=False)
class ObjectModel:
    """Point model in mm with its symmetry flag and diameter.

    diameter is the max pairwise point distance; it is the standard
    normalizer for pose-accuracy thresholds downstream.
    """

    name: str
    points: np.ndarray
    symmetric: bool
    diameter: float

    def __post_init__(self):
        pts = check_points(self.points, "points")
        object.__setattr__(self, "points", readonly(pts))

    @classmethod
    def from_points(cls, name, points, symmetric=False) -> "ObjectModel":
        pts = check_points(points, "points")
        return cls(name, pts, bool(symmetric), model_diameter(pts))

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


@dataclass(frozen=True, eq=False)
class KeypointSet:
    """Subset of model vertices chosen as keypoints."""

    model_indices: tuple
    positions: np.ndarray

    def __post_init__(self):
        idx = tuple(int(i) for i in self.model_indices)
        if len(set(idx)) != len(idx):
            raise ValueError("keypoint indices must be unique")
        pos = check_points(self.positions, "positions")
        if len(idx) != len(pos):
            raise ValueError("indices and positions disagree in length")
        object.__setattr__(self, "model_indices", idx)
        object.__setattr__(self, "positions", readonly(pos))

    def __len__(self):
        return len(self.model_indices)


def model_diameter(points) -> float:
    """Max pairwise distance, brute force (O(m^2) but chunked for memory)."""
    pts = check_points(points, "points")
    m = len(pts)
    if m == 1:
        return 0.0
    if m <= 4096:
        return float(pdist(pts).max())
    best = 0.0
    for start in range(0, m, 2048):
        chunk = pts[start : start + 2048]
        d = np.sqrt(((chunk[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
        best = max(best, float(d.max()))
    return best


def _read_xyz(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            if len(tokens) != 3:
                raise ModelParseError(
                    f"{path}: expected 3 values per line, got {len(tokens)}", line=lineno
                )
            try:
                rows.append([float(t) for t in tokens])
            except ValueError:
                raise ModelParseError(f"{path}: non-numeric vertex line", line=lineno) from None
    if not rows:
        raise ModelParseError(f"{path}: file contains zero vertices", line=1)
    return np.asarray(rows, dtype=np.float64)


def _read_ply_vertices(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ModelParseError(f"{path}: missing 'ply' magic line", line=1)

    n_vertex = None
    xyz_cols = {}
    prop_count = 0
    in_vertex_element = False
    header_end = None
    for lineno, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise ModelParseError(f"{path}: only ASCII PLY is supported", line=lineno)
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise ModelParseError(f"{path}: malformed element declaration", line=lineno)
            in_vertex_element = tokens[1] == "vertex"
            if in_vertex_element:
                try:
                    n_vertex = int(tokens[2])
                except ValueError:
                    raise ModelParseError(
                        f"{path}: malformed vertex count {tokens[2]!r}", line=lineno
                    ) from None
        elif tokens[0] == "property" and in_vertex_element:
            if len(tokens) != 3:
                raise ModelParseError(f"{path}: malformed property declaration", line=lineno)
            if tokens[2] in ("x", "y", "z"):
                if tokens[1] not in ("float", "float32", "double", "float64"):
                    raise ModelParseError(
                        f"{path}: vertex {tokens[2]} must be float, got {tokens[1]}", line=lineno
                    )
                xyz_cols[tokens[2]] = prop_count
            prop_count += 1
        elif tokens[0] == "end_header":
            header_end = lineno
            break
    if header_end is None:
        raise ModelParseError(f"{path}: header missing end_header", line=len(lines))
    if n_vertex is None:
        raise ModelParseError(f"{path}: header missing 'element vertex'", line=header_end)
    if sorted(xyz_cols) != ["x", "y", "z"]:
        raise ModelParseError(f"{path}: vertex element lacks x/y/z properties", line=header_end)
    if n_vertex == 0:
        raise ModelParseError(f"{path}: file contains zero vertices", line=header_end)
    if header_end + n_vertex > len(lines):
        raise ModelParseError(
            f"{path}: header declares {n_vertex} vertices but file ends early",
            line=len(lines),
        )

    cols = (xyz_cols["x"], xyz_cols["y"], xyz_cols["z"])
    out = np.empty((n_vertex, 3), dtype=np.float64)
    for i in range(n_vertex):
        lineno = header_end + 1 + i
        tokens = lines[lineno - 1].split()
        if len(tokens) < prop_count:
            raise ModelParseError(
                f"{path}: vertex line has {len(tokens)} values, expected {prop_count}",
                line=lineno,
            )
        try:
            out[i] = [float(tokens[c]) for c in cols]
        except ValueError:
            raise ModelParseError(f"{path}: non-numeric vertex line", line=lineno) from None
    return out


def load_model(path, name=None, symmetric=False) -> ObjectModel:
    """Load an ObjectModel from ASCII PLY or XYZ text (mm units).

    The symmetry flag is configuration, not auto-detected.
    """
    if not os.path.isfile(path):
        raise ModelParseError(f"model file not found: {path}")
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        first = fh.readline().strip()
    if first == "ply":
        pts = _read_ply_vertices(path)
    else:
        pts = _read_xyz(path)
    if not np.all(np.isfinite(pts)):
        raise ModelParseError(f"{path}: non-finite vertex coordinates")
    if name is None:
        name = os.path.splitext(os.path.basename(path))[0]
    return ObjectModel.from_points(name, pts, symmetric=symmetric)


def sample_keypoints(model: ObjectModel, n: int, seed: int = 0) -> KeypointSet:
    """Farthest-point sampling of n model vertices.

    The first index maximizes distance from the centroid; each subsequent
    index maximizes the minimum distance to the chosen set. Exact ties break
    toward the lowest index, so the result is deterministic; seed is accepted
    for interface stability but never changes the outcome.
    """
    del seed
    m = len(model.points)
    if not 1 <= n <= m:
        raise ValueError(f"n must be in [1, {m}], got {n}")
    pts = model.points
    first = int(np.argmax(np.linalg.norm(pts - model.centroid, axis=1)))
    chosen = [first]
    min_dist = np.linalg.norm(pts - pts[first], axis=1)
    for _ in range(1, n):
        min_dist[chosen] = -np.inf
        nxt = int(np.argmax(min_dist))
        chosen.append(nxt)
        min_dist = np.minimum(min_dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return KeypointSet(tuple(chosen), pts[chosen])
