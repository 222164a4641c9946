import numpy as np
import pytest
from scipy.spatial.distance import pdist

from poseforge import ModelParseError, ObjectModel, load_model, model_diameter, sample_keypoints
from poseforge.synth import random_blob_model

from conftest import random_pose

CUBE = np.array(
    [[x, y, z] for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)]
)


def _write_ply(path, points, extra_props=(), fmt="ascii 1.0"):
    lines = ["ply", f"format {fmt}", f"element vertex {len(points)}"]
    lines += ["property float x", "property float y", "property float z"]
    lines += [f"property float {name}" for name in extra_props]
    lines += ["element face 0", "property list uchar int vertex_indices", "end_header"]
    for p in points:
        row = " ".join(str(v) for v in p) + "".join(" 0.5" for _ in extra_props)
        lines.append(row)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class TestLoadModel:
    def test_ply_unit_cube(self, tmp_path):
        path = tmp_path / "cube.ply"
        _write_ply(path, CUBE)
        model = load_model(path)
        assert len(model.points) == 8
        assert np.allclose(sorted(map(tuple, model.points)), sorted(map(tuple, CUBE)))
        # brute-force diameter oracle
        assert model.diameter == pytest.approx(float(pdist(CUBE).max()))
        assert model.diameter == pytest.approx(np.sqrt(3.0))

    def test_ply_extra_properties_ignored(self, tmp_path):
        path = tmp_path / "cube_n.ply"
        _write_ply(path, CUBE, extra_props=("nx", "ny", "nz"))
        assert len(load_model(path).points) == 8

    def test_xyz_collinear(self, tmp_path):
        path = tmp_path / "line.xyz"
        path.write_text("0 0 0\n1 0 0\n2 0 0\n", encoding="utf-8")
        model = load_model(path)
        assert model.diameter == pytest.approx(2.0)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ModelParseError, match="not found"):
            load_model(tmp_path / "nope.ply")

    def test_zero_vertices(self, tmp_path):
        path = tmp_path / "empty.ply"
        _write_ply(path, [])
        with pytest.raises(ModelParseError, match="zero vertices"):
            load_model(path)
        empty = tmp_path / "empty.xyz"
        empty.write_text("# nothing\n", encoding="utf-8")
        with pytest.raises(ModelParseError, match="zero vertices"):
            load_model(empty)

    def test_non_numeric_vertex_names_line(self, tmp_path):
        path = tmp_path / "bad.xyz"
        path.write_text("0 0 0\n1 frog 0\n", encoding="utf-8")
        with pytest.raises(ModelParseError, match=r"line 2"):
            load_model(path)

    def test_binary_ply_rejected(self, tmp_path):
        path = tmp_path / "bin.ply"
        _write_ply(path, CUBE, fmt="binary_little_endian 1.0")
        with pytest.raises(ModelParseError, match="ASCII"):
            load_model(path)

    def test_malformed_header_names_line(self, tmp_path):
        path = tmp_path / "head.ply"
        path.write_text("ply\nformat ascii 1.0\nelement vertex\nend_header\n", encoding="utf-8")
        with pytest.raises(ModelParseError, match=r"line 3"):
            load_model(path)

    def test_truncated_vertex_list(self, tmp_path):
        path = tmp_path / "short.ply"
        text = "ply\nformat ascii 1.0\nelement vertex 5\n"
        text += "property float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n"
        path.write_text(text, encoding="utf-8")
        with pytest.raises(ModelParseError, match="ends early"):
            load_model(path)

    def test_symmetric_flag_is_config(self, tmp_path):
        path = tmp_path / "c.xyz"
        path.write_text("0 0 0\n1 0 0\n", encoding="utf-8")
        assert load_model(path).symmetric is False
        assert load_model(path, symmetric=True).symmetric is True


class TestDiameter:
    def test_single_point(self):
        assert model_diameter([[1.0, 2.0, 3.0]]) == 0.0

    def test_rigid_invariance(self):
        model = random_blob_model(1, 50)
        d0 = model.diameter
        for seed in range(10):
            moved = random_pose(seed).apply(model.points)
            assert abs(model_diameter(moved) - d0) <= 1e-9


class TestSampleKeypoints:
    def test_full_set_deterministic(self):
        model = ObjectModel.from_points("cube", CUBE)
        a = sample_keypoints(model, 8, seed=0)
        b = sample_keypoints(model, 8, seed=99)
        assert a.model_indices == b.model_indices
        assert len(set(a.model_indices)) == 8

    def test_cube_two_points_are_opposite_corners(self):
        model = ObjectModel.from_points("cube", CUBE)
        kp = sample_keypoints(model, 2)
        d = np.linalg.norm(kp.positions[0] - kp.positions[1])
        # exhaustive oracle: no pair is farther apart
        assert d == pytest.approx(float(pdist(CUBE).max()))

    def test_n_out_of_range(self):
        model = ObjectModel.from_points("cube", CUBE)
        with pytest.raises(ValueError):
            sample_keypoints(model, 0)
        with pytest.raises(ValueError):
            sample_keypoints(model, 9)

    def test_positions_match_indices(self):
        model = random_blob_model(2, 40)
        kp = sample_keypoints(model, 10)
        assert np.array_equal(kp.positions, model.points[list(kp.model_indices)])

    def test_coverage_monotonicity(self):
        model = random_blob_model(5, 60)

        def min_pairwise(n):
            kp = sample_keypoints(model, n)
            return float(pdist(kp.positions).min())

        spreads = [min_pairwise(n) for n in range(2, 20)]
        assert all(a >= b - 1e-12 for a, b in zip(spreads, spreads[1:]))

    def test_determinism_across_runs(self):
        model = random_blob_model(7, 30)
        runs = {sample_keypoints(model, 12).model_indices for _ in range(5)}
        assert len(runs) == 1
