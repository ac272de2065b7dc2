"""Chamfer, normal consistency, F-score, mesh sampling, and report plumbing."""

import json

import numpy as np
import numpy.testing as npt
import pytest
from scipy.spatial import cKDTree

from headfield.geometry import PointCloud, TriMesh
from headfield.metrics import (MetricReport, chamfer, f_score, facial_region_mask,
                               nearest_distances, normal_consistency, sample_mesh_points)
from headfield.synth import make_synthetic_identity, sample_surface


def sphere_cloud(radius, n, seed=0, center=(0, 0, 0)):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return PointCloud(np.asarray(center) + radius * d, d)


class TestChamfer:
    def test_identity_zero(self):
        c = sphere_cloud(1.0, 500)
        assert chamfer(c, c) == 0.0

    def test_singletons(self):
        a = PointCloud([[0.0, 0.0, 0.0]])
        b = PointCloud([[0.3, 0.4, 0.0]])
        assert chamfer(a, b) == pytest.approx(0.5)

    def test_concentric_spheres(self):
        a = sphere_cloud(1.0, 10_000, seed=1)
        b = sphere_cloud(1.1, 10_000, seed=2)
        assert chamfer(a, b) == pytest.approx(0.1, abs=0.005)

    def test_symmetry_and_nonnegativity(self):
        rng = np.random.default_rng(3)
        a = PointCloud(rng.normal(size=(100, 3)))
        b = PointCloud(rng.normal(size=(120, 3)))
        assert chamfer(a, b) == pytest.approx(chamfer(b, a), abs=1e-12)
        assert chamfer(a, b) > 0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            chamfer(PointCloud(np.zeros((0, 3))), sphere_cloud(1, 10))


class TestSpatialIndex:
    def test_kdtree_equals_bruteforce(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(1000, 3))
        b = rng.normal(size=(1000, 3))
        d_tree = nearest_distances(a, b)
        d_brute = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)).min(1)
        npt.assert_array_equal(d_tree, np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2)
                                               .sum(-1)).min(1))
        npt.assert_allclose(d_tree, d_brute, rtol=0, atol=0)


class TestNormalConsistency:
    def test_self_is_one(self):
        c = sphere_cloud(1.0, 400)
        assert normal_consistency(c, c) == pytest.approx(1.0)

    def test_flipped_normals_minus_one(self):
        c = sphere_cloud(1.0, 400)
        flipped = PointCloud(c.points.copy(), -c.normals.copy())
        assert normal_consistency(c, flipped) == pytest.approx(-1.0)

    def test_rotated_sphere_dense(self):
        # 90-degree rotation about the center maps the sphere to itself
        rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        a = sphere_cloud(1.0, 20_000, seed=5)
        b = PointCloud(a.points @ rot.T, a.normals @ rot.T)
        assert normal_consistency(a, b) == pytest.approx(1.0, abs=1e-3)

    def test_requires_normals(self):
        with pytest.raises(ValueError):
            normal_consistency(PointCloud(np.zeros((4, 3))), sphere_cloud(1, 4))

    def test_range(self):
        rng = np.random.default_rng(6)
        n = rng.normal(size=(200, 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        a = PointCloud(rng.normal(size=(200, 3)), n)
        b = PointCloud(rng.normal(size=(200, 3)), n[::-1])
        v = normal_consistency(a, b)
        assert -1.0 <= v <= 1.0


class TestFScore:
    def test_identical_is_one(self):
        c = sphere_cloud(1.0, 300)
        for tau in (1e-6, 0.01, 1.0):
            assert f_score(c, c, tau) == 1.0

    def test_disjoint_is_zero(self):
        a = PointCloud(np.zeros((10, 3)))
        b = PointCloud(np.ones((10, 3)))
        assert f_score(a, b, 0.1) == 0.0

    def test_harmonic_mean_construction(self):
        # a: 2 points, both within tau of b (precision 1)
        # b: 4 points, 2 within tau of a (recall 0.5) -> F = 2/3
        a = PointCloud([[0, 0, 0], [1, 0, 0]])
        b = PointCloud([[0, 0, 0], [1, 0, 0], [5, 0, 0], [6, 0, 0]])
        assert f_score(a, b, 0.1) == pytest.approx(2.0 / 3.0, abs=1e-9)

    def test_monotone_in_tau(self):
        rng = np.random.default_rng(7)
        a = PointCloud(rng.normal(size=(300, 3)))
        b = PointCloud(rng.normal(size=(300, 3)))
        taus = [0.01, 0.05, 0.1, 0.5, 1.0, 2.0]
        scores = [f_score(a, b, t) for t in taus]
        assert all(s2 >= s1 - 1e-12 for s1, s2 in zip(scores, scores[1:]))
        assert all(0.0 <= s <= 1.0 for s in scores)

    def test_tau_validation(self):
        with pytest.raises(ValueError):
            f_score(sphere_cloud(1, 4), sphere_cloud(1, 4), 0.0)


class TestMeshSampling:
    def test_samples_lie_on_surface(self):
        params = make_synthetic_identity(0)
        from headfield.synth import head_mesh, oracle_sdf
        mesh = head_mesh(params, resolution=48)
        pts = sample_mesh_points(mesh, 2000, seed=0)
        cell = 2.4 / 48
        assert np.abs(oracle_sdf(params, pts.points)).max() < cell * np.sqrt(3)

    def test_area_weighting(self):
        # two triangles, one 100x larger: samples should concentrate there
        mesh = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0],
                        [10, 0, 0], [20, 0, 0], [10, 10, 0]],
                       [[0, 1, 2], [3, 4, 5]])
        pts = sample_mesh_points(mesh, 4000, seed=1).points
        frac_big = (pts[:, 0] >= 9.0).mean()
        assert frac_big > 0.95

    def test_normals_from_faces(self):
        mesh = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
        pc = sample_mesh_points(mesh, 64, seed=2, with_normals=True)
        npt.assert_allclose(pc.normals, np.tile([0, 0, 1.0], (64, 1)))


class TestRegionMask:
    def test_front_halfspace(self):
        pts = np.array([[0, 0, 0.5], [0, 0, -0.5], [0, 0, 0.0]])
        npt.assert_array_equal(facial_region_mask(pts), [True, False, True])


class TestReport:
    def test_aggregates_recomputable(self):
        rows = [{"key": "a", "cd": 0.1, "nc": 0.9, "fscore": 0.5},
                {"key": "b", "cd": 0.3, "nc": 0.7, "fscore": 0.9}]
        report = MetricReport(rows=rows)
        agg = report.aggregate()
        assert agg["mean_cd"] == pytest.approx(0.2, abs=1e-9)
        assert agg["median_nc"] == pytest.approx(0.8, abs=1e-9)
        payload = json.loads(report.to_json())
        assert payload["aggregates"]["mean_fscore"] == pytest.approx(0.7, abs=1e-9)

    def test_csv_export(self):
        report = MetricReport(rows=[{"key": "a", "cd": 0.1, "nc": 0.9, "fscore": 0.5}])
        text = report.to_csv()
        assert text.splitlines()[0] == "key,cd,nc,fscore"
        assert "a,0.1,0.9,0.5" in text
