"""Region-embedding edits: sampling, swap algebra, interpolation,
displacement maps, and correspondence machinery."""

import numpy as np
import numpy.testing as npt
import pytest
import torch

from headfield.editing import (EditedIdentity, correspondence_distances, displacement_map,
                               effective_embeddings, interpolate, sample_region,
                               swap_regions, transfer_correspondence)
from headfield.geometry import TriMesh
from headfield.model import extract_mesh
from headfield.synth import marching_cubes


class TestEditedIdentity:
    def test_empty_overrides_equals_base_everywhere(self, tiny_ckpt):
        z = tiny_ckpt.identity_table[0]
        x = torch.randn(500, 3) * 0.6
        with torch.no_grad():
            base = tiny_ckpt.model(x, z, torch.zeros(tiny_ckpt.config.d_expr))
            edited = tiny_ckpt.model(x, EditedIdentity(z), torch.zeros(tiny_ckpt.config.d_expr))
        assert (base - edited).abs().max() < 1e-7

    def test_json_roundtrip(self, tiny_ckpt):
        e = EditedIdentity(tiny_ckpt.identity_table[0], {3: torch.randn(8)})
        back = EditedIdentity.from_json_dict(e.to_json_dict())
        npt.assert_allclose(back.base.numpy(), e.base.numpy(), atol=1e-7)
        npt.assert_allclose(back.overrides[3].numpy(), e.overrides[3].numpy(), atol=1e-7)


class TestSampleRegion:
    def test_scale_zero_gives_slot_means(self, tiny_ckpt):
        e = sample_region(tiny_ckpt.identity_table[0], [4], tiny_ckpt.stats, 0.0,
                          seed=1, topology=tiny_ckpt.topology)
        npt.assert_allclose(e.overrides[4].numpy(),
                            tiny_ckpt.stats.region_mean[4].astype(np.float32), atol=1e-6)

    def test_empty_region_set_is_identity(self, tiny_ckpt):
        z = tiny_ckpt.identity_table[0]
        e = sample_region(z, [], tiny_ckpt.stats, 1.0, seed=1, topology=tiny_ckpt.topology)
        assert not e.overrides
        x = torch.randn(200, 3) * 0.5
        with torch.no_grad():
            a = tiny_ckpt.model(x, z, torch.zeros(tiny_ckpt.config.d_expr))
            b = tiny_ckpt.model(x, e, torch.zeros(tiny_ckpt.config.d_expr))
        assert (a - b).abs().max() < 1e-7

    def test_mirror_partner_coedited(self, tiny_ckpt):
        l, r = tiny_ckpt.topology.pairs[0]
        e = sample_region(tiny_ckpt.identity_table[0], [l], tiny_ckpt.stats, 1.0,
                          seed=2, mirror_symmetric=True, topology=tiny_ckpt.topology)
        assert set(e.overrides) == {l, r}
        assert torch.equal(e.overrides[l], e.overrides[r])

    def test_mirror_flag_off(self, tiny_ckpt):
        l, _ = tiny_ckpt.topology.pairs[0]
        e = sample_region(tiny_ckpt.identity_table[0], [l], tiny_ckpt.stats, 1.0,
                          seed=2, mirror_symmetric=False, topology=tiny_ckpt.topology)
        assert set(e.overrides) == {l}

    def test_deterministic_per_seed(self, tiny_ckpt):
        args = (tiny_ckpt.identity_table[0], [4], tiny_ckpt.stats, 1.0)
        a = sample_region(*args, seed=7, topology=tiny_ckpt.topology)
        b = sample_region(*args, seed=7, topology=tiny_ckpt.topology)
        assert torch.equal(a.overrides[4], b.overrides[4])

    def test_unknown_region(self, tiny_ckpt):
        with pytest.raises(KeyError):
            sample_region(tiny_ckpt.identity_table[0], [77], tiny_ckpt.stats, 1.0)


class TestSwapAlgebra:
    def test_full_swap_reproduces_source_embeddings(self, tiny_ckpt):
        model = tiny_ckpt.model
        a, b = tiny_ckpt.identity_table[0], tiny_ckpt.identity_table[1]
        all_regions = range(model.num_regions)
        swapped = swap_regions(model, a, b, all_regions)
        emb_sw = effective_embeddings(model, swapped)
        emb_b = effective_embeddings(model, b)
        assert (emb_sw - emb_b).abs().max() < 1e-6
        x = torch.randn(200, 3) * 0.5
        with torch.no_grad():
            y_sw = model.identity_sdf(x, None, swapped)
            y_b = model.identity_sdf(x, None, b)
        assert (y_sw - y_b).abs().max() < 1e-6

    def test_restoration(self, tiny_ckpt):
        model = tiny_ckpt.model
        a, b = tiny_ckpt.identity_table[0], tiny_ckpt.identity_table[1]
        regions = [1, 4, 7]
        restored = swap_regions(model, swap_regions(model, a, b, regions), a, regions)
        emb = effective_embeddings(model, restored)
        emb_a = effective_embeddings(model, a)
        assert torch.equal(emb, emb_a)

    def test_disjoint_commutativity(self, tiny_ckpt):
        model = tiny_ckpt.model
        a, b = tiny_ckpt.identity_table[0], tiny_ckpt.identity_table[1]
        r1, r2 = [0, 2], [5, 8]
        ab = swap_regions(model, swap_regions(model, a, b, r1), b, r2)
        ba = swap_regions(model, swap_regions(model, a, b, r2), b, r1)
        assert torch.equal(effective_embeddings(model, ab),
                           effective_embeddings(model, ba))

    def test_random_cases_restoration_exact(self, tiny_ckpt):
        model = tiny_ckpt.model
        rng = np.random.default_rng(0)
        a, b = tiny_ckpt.identity_table[0], tiny_ckpt.identity_table[1]
        for _ in range(100):
            regions = rng.choice(model.num_regions,
                                 size=rng.integers(1, model.num_regions), replace=False)
            round_trip = swap_regions(model, swap_regions(model, a, b, regions), a, regions)
            assert torch.equal(effective_embeddings(model, round_trip),
                               effective_embeddings(model, a))

    def test_dimension_mismatch_rejected(self, tiny_ckpt):
        with pytest.raises(ValueError):
            swap_regions(tiny_ckpt.model, torch.randn(7), tiny_ckpt.identity_table[0], [0])


class TestInterpolate:
    def test_endpoints_exact(self):
        a, b = torch.randn(2, 32)
        assert torch.equal(interpolate(a, b, 0.0), a)
        assert torch.equal(interpolate(a, b, 1.0), b)

    def test_midpoint(self):
        a, b = torch.zeros(4), torch.ones(4)
        npt.assert_allclose(interpolate(a, b, 0.5).numpy(), 0.5)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            interpolate(torch.zeros(4), torch.zeros(5), 0.5)


class TestDisplacementMap:
    def sphere_mesh(self, r, res=48):
        return marching_cubes(lambda p: np.linalg.norm(p, axis=1) - r, res, (-1.0, 1.0))

    def test_identical_meshes_zero(self):
        m = self.sphere_mesh(0.5)
        npt.assert_allclose(displacement_map(m, m), 0.0, atol=1e-12)

    def test_uniform_translation_bound(self):
        m = self.sphere_mesh(0.5)
        moved = TriMesh(m.vertices + np.array([0.03, 0.0, 0.0]), m.faces.copy())
        d = displacement_map(m, moved)
        assert d.max() <= 0.03 + 1e-9
        assert d.max() > 0.02

    def test_concentric_spheres_delta(self):
        before = self.sphere_mesh(0.5, res=64)
        after = self.sphere_mesh(0.55, res=64)
        d = displacement_map(before, after)
        npt.assert_allclose(d, 0.05, atol=1e-3)

    def test_point_triangle_exactness(self):
        # single triangle in the z=0 plane: distances are analytic
        tri = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
        probes = TriMesh(np.array([
            [0.2, 0.2, 0.7],     # above the face -> 0.7
            [-0.3, -0.4, 0.0],   # closest to vertex A -> 0.5
            [0.5, -0.3, 0.4],    # closest to edge AB -> 0.5
        ]), [[0, 1, 2]])
        d = displacement_map(probes, tri)
        npt.assert_allclose(d, [0.7, 0.5, 0.5], atol=1e-12)

    def test_empty_mesh_rejected(self):
        m = self.sphere_mesh(0.5, res=16)
        with pytest.raises(ValueError):
            displacement_map(m, TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int)))


class TestCorrespondence:
    def test_neutral_self_transfer(self, tiny_ckpt):
        z = tiny_ckpt.identity_table[0]
        src = extract_mesh(tiny_ckpt.model, z, resolution=32)
        src.vertex_scalars = np.arange(len(src.vertices), dtype=np.float64)
        mesh, dist, nearest = correspondence_distances(
            src, tiny_ckpt, z, torch.zeros(tiny_ckpt.config.d_expr), resolution=32)
        # identical extraction settings: vertices map to themselves
        assert np.mean(dist < 1e-9) > 0.99
        npt.assert_array_equal(nearest[dist < 1e-9],
                               np.arange(len(src.vertices))[dist < 1e-9])

    def test_transfer_assigns_source_colors(self, tiny_ckpt):
        z = tiny_ckpt.identity_table[0]
        src = extract_mesh(tiny_ckpt.model, z, resolution=24)
        src.vertex_scalars = np.arange(len(src.vertices), dtype=np.float64)
        e = tiny_ckpt.expression_table[1]
        out = transfer_correspondence(src, tiny_ckpt, z, [e], resolution=24)
        assert len(out) == 1
        mesh = out[0]
        assert mesh.vertex_scalars is not None
        assert set(np.unique(mesh.vertex_scalars)) <= set(src.vertex_scalars)

    def test_empty_expression_list(self, tiny_ckpt):
        z = tiny_ckpt.identity_table[0]
        src = extract_mesh(tiny_ckpt.model, z, resolution=24)
        src.vertex_scalars = np.zeros(len(src.vertices))
        assert transfer_correspondence(src, tiny_ckpt, z, []) == []

    def test_requires_colors(self, tiny_ckpt):
        src = extract_mesh(tiny_ckpt.model, tiny_ckpt.identity_table[0], resolution=24)
        with pytest.raises(ValueError):
            transfer_correspondence(src, tiny_ckpt, tiny_ckpt.identity_table[0], [])
