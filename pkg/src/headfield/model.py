"""Implicit head model: a global identity code decomposed into per-region
embeddings that condition local part networks, fused into one SDF.

Pipeline for a query point x in observation space:

    (dx, ambient) = deformer(x, z_id, z_exp)        backward warp
    x_can = x + dx                                  canonical space
    emb   = decomposer(z_id)                        K region embeddings
    k     = anchor_net(emb)                         K region anchors
    f_j   = local_net[j](encode(x_can - k_j), emb_j)
    w_j   = softmax_j(-|x_can - k_j| / sigma)
    y     = fusion_net(encode(x_can), ambient, sum_j w_j f_j)

Right-side regions of a symmetric pair reuse the left network on mirrored
coordinates, so one set of weights serves both sides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from .geometry import EncodingConfig, positional_encode, mirror_point
from .synth import PART_NAMES

ABLATIONS = ("local_latent_only", "local_plus_global", "no_fusion_net", "no_local_canonical")
SOFTPLUS_BETA = 100.0   # sharp softplus, standard for Eikonal-regularized SDF nets
LATENT_INIT_STD = 0.01


@dataclass
class RegionTopology:
    """Region names, symmetry pairing, and ground-truth anchor layout.

    Each region references a head part and a fixed offset from its center;
    anchors for a concrete identity are part centers plus these offsets.
    Right-pair regions share the network of their left partner.
    """

    names: List[str]
    pairs: List[Tuple[int, int]]            # (left index, right index)
    part_index: List[int]                   # region -> index into PART_NAMES
    anchor_offsets: np.ndarray              # (K, 3)

    def __post_init__(self):
        self.anchor_offsets = np.asarray(self.anchor_offsets, dtype=np.float64).reshape(-1, 3)
        paired = [j for pair in self.pairs for j in pair]
        if len(set(paired)) != len(paired):
            raise ValueError("a region may appear in at most one symmetry pair")

    @property
    def num_regions(self) -> int:
        return len(self.names)

    @property
    def midline(self) -> List[int]:
        paired = {j for pair in self.pairs for j in pair}
        return [j for j in range(self.num_regions) if j not in paired]

    @property
    def right_regions(self) -> List[int]:
        return [r for _, r in self.pairs]

    def net_assignment(self) -> List[int]:
        """Region -> local-network index; right regions reuse the left net."""
        left_of = {r: l for l, r in self.pairs}
        nets: Dict[int, int] = {}
        assign = []
        for j in range(self.num_regions):
            owner = left_of.get(j, j)
            if owner not in nets:
                nets[owner] = len(nets)
            assign.append(nets[owner])
        return assign

    @property
    def num_nets(self) -> int:
        return self.num_regions - len(self.pairs)

    def gt_anchors(self, part_centers: np.ndarray) -> np.ndarray:
        """(K, 3) ground-truth anchors from (len(PART_NAMES), 3) part centers."""
        centers = np.asarray(part_centers, dtype=np.float64)
        return centers[self.part_index] + self.anchor_offsets

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "pairs": [list(p) for p in self.pairs],
            "part_index": list(self.part_index),
            "anchor_offsets": self.anchor_offsets.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "RegionTopology":
        return RegionTopology(
            names=list(d["names"]),
            pairs=[tuple(p) for p in d["pairs"]],
            part_index=list(d["part_index"]),
            anchor_offsets=np.array(d["anchor_offsets"]),
        )


def default_topology() -> RegionTopology:
    """One region per synthetic head part: 3 symmetric pairs + 7 midline."""
    names = list(PART_NAMES)
    pairs = []
    for i, n in enumerate(names):
        if n.endswith("_l"):
            pairs.append((i, names.index(n[:-2] + "_r")))
    return RegionTopology(
        names=names,
        pairs=pairs,
        part_index=list(range(len(names))),
        anchor_offsets=np.zeros((len(names), 3)),
    )


def expanded_topology(offset: float = 0.08) -> RegionTopology:
    """39-region variant: each part contributes three anchors.

    Midline parts add a mirrored left/right anchor pair; paired parts add two
    extra anchors each (mirrored on the right), giving 16 pairs + 7 midline.
    """
    names: List[str] = []
    part_index: List[int] = []
    offsets: List[Sequence[float]] = []
    pairs: List[Tuple[int, int]] = []

    def add(name, part, off):
        names.append(name)
        part_index.append(part)
        offsets.append(off)
        return len(names) - 1

    for i, part in enumerate(PART_NAMES):
        if part.endswith("_r"):
            continue
        if part.endswith("_l"):
            r = PART_NAMES.index(part[:-2] + "_r")
            for tag, off in [("", (0, 0, 0)), ("+y", (0, offset, 0)), ("+z", (0, 0, offset))]:
                l_idx = add(part + tag, i, off)
                r_idx = add(part[:-2] + "_r" + tag, r, off)
                pairs.append((l_idx, r_idx))
        else:
            add(part, i, (0, 0, 0))
            l_idx = add(part + "+x", i, (offset, 0, 0))
            r_idx = add(part + "-x", i, (-offset, 0, 0))
            pairs.append((l_idx, r_idx))
    return RegionTopology(names, pairs, part_index, np.array(offsets, dtype=np.float64))


@dataclass
class ModelConfig:
    """Architecture hyperparameters; defaults follow the reference sizes."""

    d_global: int = 256        # identity code size
    d_local: int = 32          # per-region embedding size
    d_expr: int = 16           # expression code size
    num_bands: int = 7         # positional encoding bands
    sigma: float = 0.1         # fusion weight temperature
    sphere_base_radius: float = 0.6   # analytic base field the SDF head corrects
    local_layers: int = 4
    local_width: int = 200
    local_feature_dim: int = 200
    fusion_layers: int = 4
    fusion_width: int = 200
    deformer_layers: int = 8
    deformer_width: int = 128
    landmark_width: int = 256
    activation: str = "softplus"
    ablation: Optional[str] = None
    fusion_encode_input: bool = True   # feed encoded coords (vs raw) to the fusion head

    def __post_init__(self):
        if self.ablation is not None and self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; options: {ABLATIONS}")
        for name in ("d_global", "d_local", "d_expr", "local_layers", "local_width",
                     "local_feature_dim", "fusion_layers", "fusion_width",
                     "deformer_layers", "deformer_width", "landmark_width"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.num_bands < 0:
            raise ValueError("num_bands must be >= 0")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.activation not in ("softplus", "relu"):
            raise ValueError("activation must be 'softplus' or 'relu'")

    @property
    def encoding(self) -> EncodingConfig:
        return EncodingConfig(self.num_bands)

    @property
    def enc_dim(self) -> int:
        return 3 * (2 * self.num_bands + 1)

    def local_only_dim(self, num_regions: int) -> int:
        # equal total latent budget: K small per-region codes ~ one global code
        return max(1, round(self.d_global / num_regions))

    def identity_dim(self, num_regions: int) -> int:
        """Size of one persisted identity latent under the active variant."""
        if self.ablation == "local_latent_only":
            return num_regions * self.local_only_dim(num_regions)
        if self.ablation == "local_plus_global":
            return self.d_global + num_regions * self.d_local
        return self.d_global

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)


def _activation(cfg: ModelConfig) -> nn.Module:
    if cfg.activation == "relu":
        return nn.ReLU()
    return nn.Softplus(beta=SOFTPLUS_BETA)


def _mlp(cfg: ModelConfig, dims: Sequence[int]) -> nn.Sequential:
    layers: List[nn.Module] = []
    for i in range(len(dims) - 1):
        layers.append(nn.Linear(dims[i], dims[i + 1]))
        if i < len(dims) - 2:
            layers.append(_activation(cfg))
    return nn.Sequential(*layers)


class ExpressionDeformer(nn.Module):
    """Backward warp net: (x_obs, z_id, z_exp) -> (dx, ambient).

    The final layer is zero-initialized so an untrained deformer is the
    identity map with zero ambient coordinates. One skip connection
    re-injects the input at the midpoint of the stack.
    """

    def __init__(self, cfg: ModelConfig, cond_dim: int):
        super().__init__()
        in_dim = cfg.enc_dim + cond_dim
        w = cfg.deformer_width
        self.skip_at = cfg.deformer_layers // 2
        dims = [in_dim] + [w] * (cfg.deformer_layers - 1) + [5]
        self.layers = nn.ModuleList()
        for i in range(len(dims) - 1):
            d_in = dims[i] + (in_dim if i == self.skip_at and i > 0 else 0)
            self.layers.append(nn.Linear(d_in, dims[i + 1]))
        self.act = _activation(cfg)
        nn.init.zeros_(self.layers[-1].weight)
        nn.init.zeros_(self.layers[-1].bias)

    def forward(self, inp: torch.Tensor) -> torch.Tensor:
        h = inp
        for i, layer in enumerate(self.layers):
            if i == self.skip_at and i > 0:
                h = torch.cat([h, inp], dim=-1)
            h = layer(h)
            if i < len(self.layers) - 1:
                h = self.act(h)
        return h


def fusion_weights(x: torch.Tensor, anchors: torch.Tensor, sigma: float) -> torch.Tensor:
    """softmax_j(-|x - k_j|_2 / sigma): convex blend weights, (N, K)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    diff = x.unsqueeze(-2) - anchors            # (N, K, 3)
    dist = torch.sqrt((diff * diff).sum(-1) + 1e-24)
    return torch.softmax(-dist / sigma, dim=-1)


def fuse_features(weights: torch.Tensor, feats: torch.Tensor) -> torch.Tensor:
    """Convex combination sum_j w_j f_j; exactly linear in the feature stack."""
    if weights.shape[-1] != feats.shape[-2]:
        raise ValueError("weights/features region counts differ")
    return (weights.unsqueeze(-1) * feats).sum(-2)


class HeadModel(nn.Module):
    def __init__(self, cfg: ModelConfig, topology: Optional[RegionTopology] = None):
        super().__init__()
        self.cfg = cfg
        self.topology = topology if topology is not None else default_topology()
        K = self.topology.num_regions
        self.num_regions = K
        self._net_of_region = self.topology.net_assignment()
        right = set(self.topology.right_regions)
        self._mirrored = [j in right for j in range(K)]
        self._mirror_mask = torch.tensor(self._mirrored)
        self._regions_of_net: Dict[int, List[int]] = {}
        for j, g in enumerate(self._net_of_region):
            self._regions_of_net.setdefault(g, []).append(j)

        if cfg.ablation == "local_latent_only":
            self.decomposer = nn.Linear(cfg.local_only_dim(K), cfg.d_local)
        elif cfg.ablation == "local_plus_global":
            self.decomposer = nn.Linear(cfg.d_global, cfg.d_local)
        else:
            self.decomposer = nn.Linear(cfg.d_global, K * cfg.d_local)

        self.anchor_net = _mlp(cfg, [K * cfg.d_local, cfg.landmark_width,
                                     cfg.landmark_width, K * 3])

        feat_dim = 1 if cfg.ablation == "no_fusion_net" else cfg.local_feature_dim
        local_in = cfg.enc_dim + cfg.d_local
        dims = [local_in] + [cfg.local_width] * (cfg.local_layers - 1) + [feat_dim]
        self.local_nets = nn.ModuleList(_mlp(cfg, dims) for _ in range(self.topology.num_nets))

        if cfg.ablation != "no_fusion_net":
            fin = (cfg.enc_dim if cfg.fusion_encode_input else 3) + 2 + cfg.local_feature_dim
            fdims = [fin] + [cfg.fusion_width] * (cfg.fusion_layers - 1) + [1]
            self.fusion_net = _mlp(cfg, fdims)
            final = self.fusion_net[-1]
        else:
            final = None

        # The SDF head emits a correction over an analytic sphere field; with a
        # zero-initialized last layer the untrained model is an exact sphere
        # SDF, which keeps far-field geometry free of spurious components.
        if final is not None:
            nn.init.zeros_(final.weight)
            nn.init.zeros_(final.bias)
        else:
            for net in self.local_nets:
                nn.init.zeros_(net[-1].weight)
                nn.init.zeros_(net[-1].bias)

        self.deformer = ExpressionDeformer(cfg, cond_dim=cfg.identity_dim(K) + cfg.d_expr)

    # -- latent initialization ------------------------------------------------

    def new_identity_latent(self, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        d = self.cfg.identity_dim(self.num_regions)
        return torch.randn(d, generator=generator) * LATENT_INIT_STD

    def new_expression_code(self, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        return torch.randn(self.cfg.d_expr, generator=generator) * LATENT_INIT_STD

    # -- identity decomposition -----------------------------------------------

    def decompose_identity(self, z: torch.Tensor) -> torch.Tensor:
        """Map identity latents (..., D) to region embeddings (..., K, d_local)."""
        K, dl = self.num_regions, self.cfg.d_local
        expect = self.cfg.identity_dim(K)
        if z.shape[-1] != expect:
            raise ValueError(f"identity latent has dim {z.shape[-1]}, expected {expect}")
        if self.cfg.ablation == "local_latent_only":
            locals_ = z.reshape(*z.shape[:-1], K, self.cfg.local_only_dim(K))
            return self.decomposer(locals_)
        if self.cfg.ablation == "local_plus_global":
            z_g, z_loc = z[..., :self.cfg.d_global], z[..., self.cfg.d_global:]
            lifted = self.decomposer(z_g).unsqueeze(-2)     # broadcast over regions
            return z_loc.reshape(*z.shape[:-1], K, dl) + lifted
        return self.decomposer(z).reshape(*z.shape[:-1], K, dl)

    def effective_embeddings(self, z, overrides: Optional[Dict[int, torch.Tensor]] = None
                             ) -> torch.Tensor:
        """Region embeddings with sparse editing overrides applied.

        `z` may be a raw latent tensor or any object carrying `.base` and
        `.overrides` (an edited identity).
        """
        if hasattr(z, "overrides") and hasattr(z, "base"):
            merged = dict(z.overrides)
            if overrides:
                merged.update(overrides)
            z, overrides = z.base, merged
        emb = self.decompose_identity(z)
        if overrides:
            emb = emb.clone()
            for j, vec in overrides.items():
                if not 0 <= int(j) < self.num_regions:
                    raise KeyError(f"region index {j} out of range")
                emb[..., int(j), :] = torch.as_tensor(vec, dtype=emb.dtype, device=emb.device)
        return emb

    # -- anchors / local features / fusion -------------------------------------

    def regress_landmarks(self, emb: torch.Tensor) -> torch.Tensor:
        """Region anchors (..., K, 3) from the concatenated embeddings."""
        K = self.num_regions
        flat = emb.reshape(*emb.shape[:-2], K * self.cfg.d_local)
        return self.anchor_net(flat).reshape(*emb.shape[:-2], K, 3)

    def _region_features(self, x_can: torch.Tensor, emb: torch.Tensor,
                         anchors: torch.Tensor) -> torch.Tensor:
        """Core feature stack (N, K, F) with per-point embeddings/anchors.

        emb is (N, K, d_local) (or broadcastable), anchors (N, K, 3). Right
        regions are evaluated by the shared left network on coordinates
        mirrored across the sagittal plane.
        """
        n = x_can.shape[0]
        local = x_can.unsqueeze(-2) - anchors                  # (N, K, 3)
        if self.cfg.ablation == "no_local_canonical":
            local = x_can.unsqueeze(-2).expand(n, self.num_regions, 3)
        if any(self._mirrored):
            flip = torch.ones(self.num_regions, 3, dtype=x_can.dtype, device=x_can.device)
            flip[self._mirror_mask] = torch.tensor([-1.0, 1.0, 1.0], dtype=x_can.dtype,
                                                   device=x_can.device)
            local = local * flip
        enc = positional_encode(local, self.cfg.encoding)      # (N, K, enc)
        inp = torch.cat([enc, emb.expand(n, self.num_regions, self.cfg.d_local)], dim=-1)
        feats = x_can.new_empty(n, self.num_regions,
                                1 if self.cfg.ablation == "no_fusion_net"
                                else self.cfg.local_feature_dim)
        for g, regions in self._regions_of_net.items():
            flat = inp[:, regions, :].reshape(n * len(regions), -1)
            out = self.local_nets[g](flat).reshape(n, len(regions), -1)
            feats[:, regions, :] = out
        return feats

    def local_part_features(self, x_can: torch.Tensor, emb: torch.Tensor,
                            anchors: torch.Tensor) -> torch.Tensor:
        """Per-region features (N, K, F) for one identity's embeddings (K, d)
        and anchors (K, 3); right regions run mirrored through the shared
        left network."""
        n = x_can.shape[0]
        return self._region_features(x_can, emb.unsqueeze(0), anchors.unsqueeze(0).expand(n, -1, -1))

    # -- SDF heads --------------------------------------------------------------

    def _sphere_base(self, x_can: torch.Tensor) -> torch.Tensor:
        return torch.sqrt((x_can * x_can).sum(-1) + 1e-12) - self.cfg.sphere_base_radius

    def _sdf_core(self, x_can: torch.Tensor, ambient: Optional[torch.Tensor],
                  emb: torch.Tensor, anchors: torch.Tensor) -> torch.Tensor:
        feats = self._region_features(x_can, emb, anchors)
        w = fusion_weights(x_can, anchors, self.cfg.sigma)
        if self.cfg.ablation == "no_fusion_net":
            return fuse_features(w, feats).squeeze(-1) + self._sphere_base(x_can)
        fused = fuse_features(w, feats)
        if ambient is None:
            ambient = x_can.new_zeros(x_can.shape[0], 2)
        coords = positional_encode(x_can, self.cfg.encoding) if self.cfg.fusion_encode_input else x_can
        correction = self.fusion_net(torch.cat([coords, ambient, fused], dim=-1)).squeeze(-1)
        return correction + self._sphere_base(x_can)

    def identity_sdf(self, x_can: torch.Tensor, ambient: Optional[torch.Tensor], z,
                     overrides: Optional[Dict[int, torch.Tensor]] = None) -> torch.Tensor:
        """Canonical-space SDF (N,) for points (N, 3)."""
        emb = self.effective_embeddings(z, overrides)
        anchors = self.regress_landmarks(emb)
        n = x_can.shape[0]
        return self._sdf_core(x_can, ambient, emb.unsqueeze(0),
                              anchors.unsqueeze(0).expand(n, -1, -1))

    def expression_warp(self, x_obs: torch.Tensor, z_id: torch.Tensor,
                        z_exp: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Backward displacement (N, 3) and ambient coordinates (N, 2)."""
        if hasattr(z_id, "base"):
            z_id = z_id.base
        n = x_obs.shape[0]
        enc = positional_encode(x_obs, self.cfg.encoding)
        cond = torch.cat([z_id, z_exp]).unsqueeze(0).expand(n, -1)
        out = self.deformer(torch.cat([enc, cond], dim=-1))
        return out[:, :3], out[:, 3:5]

    def forward(self, x_obs: torch.Tensor, z, z_exp: torch.Tensor,
                overrides: Optional[Dict[int, torch.Tensor]] = None) -> torch.Tensor:
        """Observation-space SDF (N,) for points (N, 3)."""
        delta, ambient = self.expression_warp(x_obs, z, z_exp)
        return self.identity_sdf(x_obs + delta, ambient, z, overrides)

    def forward_grouped(self, x_obs: torch.Tensor, z_batch: torch.Tensor,
                        z_exp_batch: torch.Tensor, group: torch.Tensor):
        """Batched forward where point i belongs to scan group[i].

        z_batch (S, D) and z_exp_batch (S, d_expr) hold per-scan codes; per-
        scan embeddings and anchors are computed once and gathered per point.
        Returns (sdf, delta, ambient, emb (S,K,d), anchors (S,K,3)).
        """
        n = x_obs.shape[0]
        enc = positional_encode(x_obs, self.cfg.encoding)
        cond = torch.cat([z_batch, z_exp_batch], dim=-1)[group]
        out = self.deformer(torch.cat([enc, cond], dim=-1))
        delta, ambient = out[:, :3], out[:, 3:5]
        emb = self.decompose_identity(z_batch)                 # (S, K, d)
        anchors = self.regress_landmarks(emb)                  # (S, K, 3)
        y = self._sdf_core(x_obs + delta, ambient, emb[group], anchors[group])
        return y, delta, ambient, emb, anchors


def sdf_with_gradient(model: HeadModel, x: torch.Tensor, z, z_exp: torch.Tensor,
                      overrides: Optional[Dict[int, torch.Tensor]] = None,
                      create_graph: bool = False):
    """(values, spatial gradients, warp deltas, ambient) with autograd d/dx."""
    x = x.detach().requires_grad_(True)
    delta, ambient = model.expression_warp(x, z, z_exp)
    y = model.identity_sdf(x + delta, ambient, z, overrides)
    grad = torch.autograd.grad(y.sum(), x, create_graph=create_graph)[0]
    return y, grad, delta, ambient


def field_fn(model: HeadModel, z, z_exp: Optional[torch.Tensor] = None,
             overrides: Optional[Dict[int, torch.Tensor]] = None):
    """Numpy-in/numpy-out SDF callback over a frozen model (no gradients)."""
    dtype = next(model.parameters()).dtype
    if z_exp is None:
        z_exp = torch.zeros(model.cfg.d_expr, dtype=dtype)

    def fn(pts: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            x = torch.from_numpy(np.ascontiguousarray(pts)).to(dtype)
            return model(x, z, z_exp.to(dtype), overrides).cpu().double().numpy()

    return fn


def extract_mesh(model: HeadModel, z, z_exp: Optional[torch.Tensor] = None,
                 resolution: int = 128, bounds=(-1.2, 1.2),
                 overrides: Optional[Dict[int, torch.Tensor]] = None):
    """Marching-cubes mesh of the model's zero level set."""
    from .synth import marching_cubes

    return marching_cubes(field_fn(model, z, z_exp, overrides), resolution, bounds)
