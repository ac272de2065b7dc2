"""Localized identity manipulation in the region-embedding space.

Edits never touch the global identity code; they override per-region
embeddings after decomposition, so anchors re-regress from the edited
embeddings and the rest of the head stays put.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import torch
from scipy.spatial import cKDTree

from .geometry import PointCloud, TriMesh
from .model import HeadModel, extract_mesh
from .training import Checkpoint, LatentStats


@dataclass
class EditedIdentity:
    """A base identity latent plus sparse region-embedding overrides."""

    base: torch.Tensor
    overrides: Dict[int, torch.Tensor] = field(default_factory=dict)

    def __post_init__(self):
        self.base = torch.as_tensor(self.base, dtype=torch.float32)
        self.overrides = {int(j): torch.as_tensor(v, dtype=torch.float32)
                          for j, v in self.overrides.items()}

    def to_json_dict(self) -> dict:
        return {
            "base": [float(v) for v in self.base],
            "overrides": {str(j): [float(x) for x in v] for j, v in self.overrides.items()},
        }

    @staticmethod
    def from_json_dict(d: dict) -> "EditedIdentity":
        return EditedIdentity(
            base=torch.tensor(d["base"], dtype=torch.float32),
            overrides={int(j): torch.tensor(v, dtype=torch.float32)
                       for j, v in d.get("overrides", {}).items()},
        )


def _as_base_and_overrides(z) -> tuple:
    if isinstance(z, EditedIdentity):
        return z.base, dict(z.overrides)
    return torch.as_tensor(z, dtype=torch.float32), {}


def effective_embeddings(model: HeadModel, z: Union[torch.Tensor, EditedIdentity]) -> torch.Tensor:
    """(K, d_local) embeddings with any overrides applied."""
    with torch.no_grad():
        return model.effective_embeddings(z)


def sample_region(base: Union[torch.Tensor, EditedIdentity], regions: Iterable[int],
                  stats: LatentStats, scale: float, seed: int = 0,
                  mirror_symmetric: bool = True,
                  topology=None) -> EditedIdentity:
    """Replace selected region embeddings with draws from the embedding
    distribution: slot mean + scale * slot std * standard normal.

    With mirror_symmetric, the symmetric partner of each selected region
    receives the same draw (the shared mirrored network then produces a
    mirrored edit). scale=0 yields the slot means.
    """
    if scale < 0:
        raise ValueError("scale must be >= 0")
    base_z, overrides = _as_base_and_overrides(base)
    mean = torch.from_numpy(stats.region_mean).float()
    std = torch.from_numpy(stats.region_std).float()
    K = mean.shape[0]
    partner = {}
    if topology is not None:
        for l, r in topology.pairs:
            partner[l], partner[r] = r, l
    gen = torch.Generator().manual_seed(seed)
    for j in regions:
        j = int(j)
        if not 0 <= j < K:
            raise KeyError(f"unknown region index {j}")
        draw = mean[j] + scale * std[j] * torch.randn(mean.shape[1], generator=gen)
        overrides[j] = draw
        if mirror_symmetric and j in partner:
            overrides[partner[j]] = draw.clone()
    return EditedIdentity(base_z, overrides)


def swap_regions(model: HeadModel, a: Union[torch.Tensor, EditedIdentity],
                 b: Union[torch.Tensor, EditedIdentity],
                 regions: Iterable[int]) -> EditedIdentity:
    """Give `a` the effective embeddings of `b` on the selected regions."""
    base_a, over_a = _as_base_and_overrides(a)
    base_b, _ = _as_base_and_overrides(b)
    expect = model.cfg.identity_dim(model.num_regions)
    if base_a.shape[-1] != expect or base_b.shape[-1] != expect:
        raise ValueError("identity latents do not match the model configuration")
    emb_b = effective_embeddings(model, b)
    for j in regions:
        j = int(j)
        if not 0 <= j < model.num_regions:
            raise KeyError(f"unknown region index {j}")
        over_a[j] = emb_b[j].clone()
    return EditedIdentity(base_a, over_a)


def interpolate(a: torch.Tensor, b: torch.Tensor, t: float) -> torch.Tensor:
    """Linear latent interpolation (1-t)a + tb."""
    a = torch.as_tensor(a, dtype=torch.float32)
    b = torch.as_tensor(b, dtype=torch.float32)
    if a.shape != b.shape:
        raise ValueError("latent shapes differ")
    return (1.0 - t) * a + t * b


# ---------------------------------------------------------------------------
# Displacement maps
# ---------------------------------------------------------------------------

def _point_triangle_distance(points: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Exact distances between points[i] and triangles tri[i] (paired rows)."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, ac, ap = b - a, c - a, points - a
    d1 = (ab * ap).sum(1)
    d2 = (ac * ap).sum(1)
    bp = points - b
    d3 = (ab * bp).sum(1)
    d4 = (ac * bp).sum(1)
    cp = points - c
    d5 = (ab * cp).sum(1)
    d6 = (ac * cp).sum(1)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = np.maximum(va + vb + vc, 1e-30)
    v = vb / denom
    w = vc / denom
    closest = a + v[:, None] * ab + w[:, None] * ac

    # vertex regions
    m = (d1 <= 0) & (d2 <= 0)
    closest[m] = a[m]
    m = (d3 >= 0) & (d4 <= d3)
    closest[m] = b[m]
    m = (d6 >= 0) & (d5 <= d6)
    closest[m] = c[m]
    # edge AB
    m = (~((d1 <= 0) & (d2 <= 0))) & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    t = np.clip(d1 / np.maximum(d1 - d3, 1e-30), 0, 1)
    cand = a + t[:, None] * ab
    closest[m] = cand[m]
    # edge AC
    m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    t = np.clip(d2 / np.maximum(d2 - d6, 1e-30), 0, 1)
    cand = a + t[:, None] * ac
    closest[m] = cand[m]
    # edge BC
    m = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    t = np.clip((d4 - d3) / np.maximum((d4 - d3) + (d5 - d6), 1e-30), 0, 1)
    cand = b + t[:, None] * (c - b)
    closest[m] = cand[m]

    return np.linalg.norm(points - closest, axis=1)


def displacement_map(before: TriMesh, after: TriMesh, candidates: int = 8) -> np.ndarray:
    """Per-vertex distance from `before` vertices to the `after` surface.

    Shortlists nearby triangles by centroid KD-tree, then takes the exact
    minimum point-to-triangle distance among them.
    """
    if before.is_empty or after.is_empty:
        raise ValueError("displacement_map requires nonempty meshes")
    centroids = after.vertices[after.faces].mean(axis=1)
    k = min(candidates, len(after.faces))
    _, near = cKDTree(centroids).query(before.vertices, k=k)
    if k == 1:
        near = near[:, None]
    pts = before.vertices
    best = np.full(len(pts), np.inf)
    tri_all = after.vertices[after.faces]
    for col in range(near.shape[1]):
        d = _point_triangle_distance(pts, tri_all[near[:, col]])
        best = np.minimum(best, d)
    return best


# ---------------------------------------------------------------------------
# Correspondence transfer
# ---------------------------------------------------------------------------

def backward_warp_vertices(model: HeadModel, vertices: np.ndarray, z_id,
                           z_exp: torch.Tensor, chunk: int = 65_536) -> np.ndarray:
    """Map observed-space vertices into canonical space via the learned warp."""
    dtype = next(model.parameters()).dtype
    out = np.empty_like(vertices, dtype=np.float64)
    with torch.no_grad():
        for i in range(0, len(vertices), chunk):
            x = torch.from_numpy(vertices[i:i + chunk]).to(dtype)
            delta, _ = model.expression_warp(x, z_id, z_exp.to(dtype))
            out[i:i + chunk] = (x + delta).cpu().double().numpy()
    return out


def transfer_correspondence(src: TriMesh, ckpt: Checkpoint, z_id,
                            expressions: Sequence[torch.Tensor],
                            resolution: int = 96) -> List[TriMesh]:
    """Propagate per-vertex colors from a neutral source mesh to expressions.

    Each expression mesh is extracted, its vertices are backward-warped to
    canonical space, and every vertex inherits the color of the nearest
    source vertex there (1-NN). The source must be the neutral-expression
    extraction of the same identity.
    """
    if src.vertex_scalars is None:
        raise ValueError("source mesh needs per-vertex colors")
    src_canonical = backward_warp_vertices(
        ckpt.model, src.vertices, z_id,
        torch.zeros(ckpt.config.d_expr))
    tree = cKDTree(src_canonical)
    out: List[TriMesh] = []
    for z_exp in expressions:
        mesh = extract_mesh(ckpt.model, z_id, z_exp, resolution=resolution)
        if mesh.is_empty:
            out.append(mesh)
            continue
        canonical = backward_warp_vertices(ckpt.model, mesh.vertices, z_id, z_exp)
        _, nearest = tree.query(canonical, k=1)
        mesh.vertex_scalars = src.vertex_scalars[nearest]
        out.append(mesh)
    return out


def correspondence_distances(src: TriMesh, ckpt: Checkpoint, z_id,
                             z_exp: torch.Tensor, resolution: int = 96):
    """1-NN canonical-space distances used by correspondence quality checks.

    Returns (mesh, distances, nearest source index) for one expression.
    """
    src_canonical = backward_warp_vertices(ckpt.model, src.vertices, z_id,
                                           torch.zeros(ckpt.config.d_expr))
    tree = cKDTree(src_canonical)
    mesh = extract_mesh(ckpt.model, z_id, z_exp, resolution=resolution)
    if mesh.is_empty:
        raise RuntimeError("empty expression mesh")
    canonical = backward_warp_vertices(ckpt.model, mesh.vertices, z_id, z_exp)
    dist, nearest = tree.query(canonical, k=1)
    return mesh, dist, nearest
