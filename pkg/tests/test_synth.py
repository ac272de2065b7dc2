"""Synthetic head family: identity sampling, the analytic SDF oracle,
surface sampling, and marching cubes."""

import numpy as np
import numpy.testing as npt
import pytest

from headfield import synth
from headfield.geometry import TriMesh
from headfield.synth import (PART_NAMES, ExpressionControls, backward_warp_points,
                             ellipsoid_distance, make_expression_controls,
                             make_synthetic_identity, marching_cubes, oracle_gradient,
                             oracle_sdf, sample_surface, smooth_min, with_expression)


class TestIdentitySampling:
    def test_deterministic(self):
        assert make_synthetic_identity(0).to_json() == make_synthetic_identity(0).to_json()

    def test_seed_changes_params(self):
        assert make_synthetic_identity(0).to_json() != make_synthetic_identity(1).to_json()

    def test_bounds_over_many_seeds(self):
        # documented ranges: centers in [-1,1]^3, radii scaled by [0.82, 1.18]
        # of the template (plus <=10% right-side asymmetry)
        for seed in range(1000):
            p = make_synthetic_identity(seed)
            for name in PART_NAMES:
                spec = p.parts[name]
                assert np.all(np.abs(spec.center) <= 1.0)
                base = np.array(synth._TEMPLATE[name.replace("_r", "_l")
                                                if name.endswith("_r") else name][1])
                ratio = spec.radii / base
                assert np.all(ratio > 0.82 * 0.9 - 1e-9)
                assert np.all(ratio < 1.18 * 1.1 + 1e-9)

    def test_right_asymmetry_bounded(self):
        for seed in range(50):
            p = make_synthetic_identity(seed)
            for name in PART_NAMES:
                if not name.endswith("_r"):
                    continue
                left = p.parts[name[:-2] + "_l"]
                assert np.all(np.abs(p.parts[name].radii / left.radii - 1.0) <= 0.10 + 1e-12)

    def test_json_roundtrip(self):
        p = make_synthetic_identity(7)
        q = synth.SyntheticHeadParams.from_json(p.to_json())
        assert q.to_json() == p.to_json()


class TestEllipsoidDistance:
    def test_sphere_exact(self):
        rng = np.random.default_rng(0)
        c, r = np.array([0.1, -0.2, 0.05]), np.array([0.3, 0.3, 0.3])
        x = rng.uniform(-1.5, 1.5, (500, 3))
        npt.assert_allclose(ellipsoid_distance(x, c, r),
                            np.linalg.norm(x - c, axis=1) - 0.3, atol=1e-12)

    def test_surface_zero_and_sign(self):
        r = np.array([0.4, 0.25, 0.3])
        theta = np.linspace(0, 2 * np.pi, 50)
        on = np.stack([r[0] * np.cos(theta), r[1] * np.sin(theta), np.zeros_like(theta)], 1)
        npt.assert_allclose(ellipsoid_distance(on, np.zeros(3), r), 0.0, atol=1e-9)
        assert ellipsoid_distance(np.zeros(3), np.zeros(3), r) < 0
        assert ellipsoid_distance(np.array([1.0, 1.0, 1.0]), np.zeros(3), r) > 0

    def test_unit_gradient(self):
        rng = np.random.default_rng(1)
        r = np.array([0.35, 0.2, 0.28])
        x = rng.uniform(-1.2, 1.2, (300, 3))
        h = 1e-5
        g = np.stack([(ellipsoid_distance(x + e, np.zeros(3), r)
                       - ellipsoid_distance(x - e, np.zeros(3), r)) / (2 * h)
                      for e in np.eye(3) * h], axis=1)
        gn = np.linalg.norm(g, axis=1)
        # exclude the interior medial region where true SDFs kink
        keep = ellipsoid_distance(x, np.zeros(3), r) > -0.05
        assert np.all(np.abs(gn[keep] - 1.0) < 1e-3)


class TestSmoothMin:
    def test_below_min_plus_blend(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(2, 10_000))
        k = 0.1
        s = smooth_min(a, b, k)
        assert np.all(s <= np.minimum(a, b) + k + 1e-12)
        assert np.all(s >= np.minimum(a, b) - k / 4 - 1e-12)

    def test_equals_min_outside_band(self):
        a = np.array([0.5, -0.3])
        b = np.array([0.1, 0.5])
        npt.assert_array_equal(smooth_min(a, b, 0.1), np.minimum(a, b))


class TestOracle:
    def test_surface_points_near_zero(self):
        p = make_synthetic_identity(0)
        cloud = sample_surface(p, 500, seed=1)
        assert np.abs(oracle_sdf(p, cloud.points)).max() < 1e-4

    def test_oracle_composition_vs_bruteforce(self):
        # independent re-evaluation: fold exact part distances with smooth_min
        p = make_synthetic_identity(3)
        rng = np.random.default_rng(3)
        x = rng.uniform(-2, 2, (2000, 3))
        d = None
        for name in PART_NAMES:
            part = p.parts[name]
            dp = ellipsoid_distance(x, part.center, part.radii)
            d = dp if d is None else smooth_min(d, dp, part.blend_k)
        npt.assert_allclose(oracle_sdf(p, x), d, atol=1e-9)

    def test_gradient_norm_band_outside_blend_zones(self):
        p = make_synthetic_identity(0)
        rng = np.random.default_rng(4)
        x = rng.uniform(-2, 2, (10_000, 3))
        g = oracle_gradient(p, x)
        gn = np.linalg.norm(g, axis=1)
        dists = np.stack([ellipsoid_distance(x, p.parts[n].center, p.parts[n].radii)
                          for n in PART_NAMES], axis=1)
        ks = max(p.parts[n].blend_k for n in PART_NAMES)
        two = np.sort(dists, axis=1)[:, :2]
        outside = (two[:, 1] - two[:, 0]) > 2 * ks
        inside_head = oracle_sdf(p, x) < -0.02
        mask = outside & ~inside_head     # interior medial kinks excluded
        assert mask.sum() > 300
        assert np.all(gn[mask] > 0.8) and np.all(gn[mask] < 1.2)

    def test_analytic_gradient_matches_central_differences(self):
        p = with_expression(make_synthetic_identity(1), make_expression_controls(2))
        rng = np.random.default_rng(5)
        x = rng.uniform(-1, 1, (500, 3))
        _, g = synth.oracle_sdf_and_gradient(p, x)
        npt.assert_allclose(g, oracle_gradient(p, x), atol=1e-4)


class TestExpressionWarp:
    def test_neutral_is_identity(self):
        pts = np.random.default_rng(6).uniform(-1, 1, (100, 3))
        npt.assert_array_equal(backward_warp_points(pts, ExpressionControls()), pts)

    def test_jaw_rotation_moves_chin_not_crown(self):
        ctl = ExpressionControls(jaw_open=0.3)
        chin = np.array([[0.0, -0.32, 0.35]])
        crown = np.array([[0.0, 0.6, 0.0]])
        assert np.linalg.norm(backward_warp_points(chin, ctl) - chin) > 0.05
        assert np.linalg.norm(backward_warp_points(crown, ctl) - crown) < 1e-6

    def test_posed_field_zero_on_posed_samples(self):
        p = with_expression(make_synthetic_identity(2), ExpressionControls(jaw_open=0.3))
        cloud = sample_surface(p, 300, seed=2)
        assert np.abs(oracle_sdf(p, cloud.points)).max() < 1e-4

    def test_posed_surface_differs_from_neutral(self):
        neutral = make_synthetic_identity(2)
        posed = with_expression(neutral, ExpressionControls(jaw_open=0.3))
        pts = sample_surface(posed, 500, seed=3).points
        assert np.abs(oracle_sdf(neutral, pts)).max() > 0.01


class TestSampleSurface:
    def test_count_and_residual(self):
        p = make_synthetic_identity(0)
        cloud = sample_surface(p, 777, seed=0)
        assert len(cloud) == 777
        assert np.all(np.abs(oracle_sdf(p, cloud.points)) < 1e-4)

    def test_normals_unit(self):
        cloud = sample_surface(make_synthetic_identity(0), 500, seed=1)
        npt.assert_allclose(np.linalg.norm(cloud.normals, axis=1), 1.0, atol=1e-5)

    def test_sphere_normals_analytic(self):
        # collapse the head to one spherical part (blend 0 keeps min exact):
        # normals must be radial
        p = make_synthetic_identity(0)
        c = np.array([0.0, 0.1, 0.0])
        r = np.array([0.5, 0.5, 0.5])
        for name in PART_NAMES:
            p.parts[name] = synth.PartSpec(c, r, 0.0)
        cloud = sample_surface(p, 400, seed=2)
        expected = (cloud.points - c) / 0.5
        expected /= np.linalg.norm(expected, axis=1, keepdims=True)
        assert np.abs(cloud.normals - expected).max() < 1e-3
        npt.assert_allclose(np.linalg.norm(cloud.points - c, axis=1), 0.5, atol=1e-4)

    def test_deterministic_per_seed(self):
        p = make_synthetic_identity(4)
        a = sample_surface(p, 128, seed=9)
        b = sample_surface(p, 128, seed=9)
        npt.assert_array_equal(a.points, b.points)

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            sample_surface(make_synthetic_identity(0), 0)


class TestMarchingCubes:
    def sphere_field(self, radius=0.5):
        return lambda p: np.linalg.norm(p, axis=1) - radius

    def test_sphere_residual_res128(self):
        mesh = marching_cubes(self.sphere_field(), 128, (-1.0, 1.0))
        err = np.abs(np.linalg.norm(mesh.vertices, axis=1) - 0.5)
        assert err.mean() < 2 * (2.0 / 128)

    def test_refinement_reduces_residual(self):
        res = {}
        for r in (64, 128):
            mesh = marching_cubes(self.sphere_field(), r, (-1.0, 1.0))
            res[r] = np.abs(np.linalg.norm(mesh.vertices, axis=1) - 0.5).mean()
        assert res[128] < res[64]

    def test_constant_positive_field_empty(self):
        mesh = marching_cubes(lambda p: np.ones(len(p)), 16, (-1.0, 1.0))
        assert mesh.is_empty

    def test_orientation_outward(self):
        mesh = marching_cubes(self.sphere_field(), 48, (-1.0, 1.0))
        centroids = mesh.vertices[mesh.faces].mean(axis=1)
        outward = centroids / np.linalg.norm(centroids, axis=1, keepdims=True)
        dots = (mesh.face_normals() * outward).sum(axis=1)
        assert (dots > 0).mean() > 0.99

    def test_vertices_within_cell_diagonal_of_level_set(self):
        p = make_synthetic_identity(0)
        mesh = marching_cubes(lambda q: oracle_sdf(p, q), 48, (-1.2, 1.2))
        cell = 2.4 / 48
        vals = oracle_sdf(p, mesh.vertices)
        assert np.abs(vals).max() < cell * np.sqrt(3)

    def test_no_degenerate_faces(self):
        mesh = marching_cubes(self.sphere_field(), 32, (-1.0, 1.0))
        assert np.all(mesh.face_areas() > 1e-12)

    def test_resolution_validation(self):
        with pytest.raises(ValueError):
            marching_cubes(self.sphere_field(), 4, (-1, 1))


class TestWatertight:
    @pytest.mark.parametrize("seed", [0, 5])
    def test_neutral_head_closed_single_component(self, seed):
        synth.validate_head(make_synthetic_identity(seed), resolution=48)
