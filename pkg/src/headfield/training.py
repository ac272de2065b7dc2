"""Auto-decoder training: network weights and per-identity / per-scan latent
tables optimized jointly against sampled scan batches.

The synthetic dataset directory holds one params JSON plus one binary PLY per
(identity, expression); expression index 0 is the neutral pose and its code
stays pinned at zero so the canonical space is the neutral expression.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from . import losses, synth
from .geometry import PointCloud
from .losses import LossWeights
from .meshio import load_ply, save_ply
from .model import HeadModel, ModelConfig, RegionTopology, default_topology, sdf_with_gradient

SCHEMA_VERSION = "1"
OFF_SURFACE_BOX = 1.2
OFF_SURFACE_NOISE = 0.05


class TrainingDiverged(RuntimeError):
    """Raised when the loss turns non-finite; carries the last loss report."""

    def __init__(self, step: int, report: Dict[str, float]):
        super().__init__(f"non-finite loss at step {step}: {report}")
        self.step = step
        self.report = report


def desk_model_config() -> ModelConfig:
    """Reduced architecture sized for CPU training on the synthetic family."""
    return ModelConfig(
        d_global=96, d_local=16, d_expr=8, num_bands=4,
        local_width=48, local_feature_dim=48, fusion_width=48,
        deformer_layers=6, deformer_width=80, landmark_width=128,
    )


def desk_train_config(steps: int = 6000, seed: int = 0, **overrides) -> TrainConfig:
    """Training setup for the 16-identity / 4-expression desk dataset."""
    return TrainConfig(steps=steps, batch_scans=4, n_surf=192, n_off=192,
                       seed=seed, model=desk_model_config(), **overrides)


@dataclass
class TrainConfig:
    steps: int = 8000
    batch_scans: int = 4          # scans per optimization step
    n_surf: int = 256             # surface samples per scan
    n_off: int = 256              # off-surface samples per scan
    lr_net: float = 5e-4
    lr_latent: float = 1e-3
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    ablation: Optional[str] = None
    model: ModelConfig = field(default_factory=desk_model_config)
    log_every: int = 100
    eval_every: int = 2000
    eval_resolution: int = 48
    freeze_neutral_expression: bool = True
    normal_loss_norm: str = "l2"

    def __post_init__(self):
        for name in ("steps", "batch_scans", "n_surf", "n_off"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def resolved_model(self) -> ModelConfig:
        if self.ablation is not None:
            return replace(self.model, ablation=self.ablation)
        return self.model

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k not in ("weights", "model")}
        d["weights"] = self.weights.to_dict()
        d["model"] = self.model.to_dict()
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d:
            d["weights"] = LossWeights.from_dict(d["weights"])
        if "model" in d:
            d["model"] = ModelConfig.from_dict(d["model"])
        return TrainConfig(**d)


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

@dataclass
class ScanRecord:
    key: str                      # e.g. "id0003_e01"
    identity_label: str
    expression_index: int
    params: synth.SyntheticHeadParams
    cloud: PointCloud

    @property
    def is_neutral(self) -> bool:
        return self.expression_index == 0

    def part_centers(self) -> np.ndarray:
        return self.params.part_centers()


@dataclass
class HeadDataset:
    records: List[ScanRecord]

    @property
    def identity_labels(self) -> List[str]:
        seen: List[str] = []
        for r in self.records:
            if r.identity_label not in seen:
                seen.append(r.identity_label)
        return seen

    def identity_index(self) -> Dict[str, int]:
        return {label: i for i, label in enumerate(self.identity_labels)}

    def neutral_record(self, identity_label: str) -> ScanRecord:
        for r in self.records:
            if r.identity_label == identity_label and r.is_neutral:
                return r
        raise ValueError(f"identity {identity_label} has no neutral scan")


def scan_stem(identity_seed: int, expression_index: int) -> str:
    return f"id{identity_seed:04d}_e{expression_index:02d}"


def synthesize_dataset(out_dir: Union[str, Path], num_identities: int,
                       num_expressions: int, seed: int = 0,
                       points_per_scan: int = 4096) -> Path:
    """Generate params JSON + sampled PLY for each (identity, expression)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(num_identities):
        identity = synth.make_synthetic_identity(seed + i)
        for e in range(num_expressions):
            controls = synth.ExpressionControls() if e == 0 else \
                synth.make_expression_controls((seed + i) * 1000 + e)
            posed = synth.with_expression(identity, controls)
            stem = scan_stem(seed + i, e)
            (out / f"{stem}.json").write_text(posed.to_json())
            cloud = synth.sample_surface(posed, points_per_scan, seed=(seed + i) * 997 + e)
            save_ply(cloud, out / f"{stem}.ply")
    return out


def load_dataset(data_dir: Union[str, Path]) -> HeadDataset:
    data_dir = Path(data_dir)
    records = []
    for params_path in sorted(data_dir.glob("*.json")):
        stem = params_path.stem
        ply_path = data_dir / f"{stem}.ply"
        if not ply_path.exists():
            continue
        params = synth.SyntheticHeadParams.from_json(params_path.read_text())
        label, _, expr = stem.rpartition("_e")
        records.append(ScanRecord(
            key=stem, identity_label=label, expression_index=int(expr),
            params=params, cloud=load_ply(ply_path),
        ))
    if not records:
        raise ValueError(f"no (json, ply) scan pairs found in {data_dir}")
    return HeadDataset(records)


def sample_training_batch(scan: PointCloud, n_surf: int, n_off: int, seed: int,
                          params: Optional[synth.SyntheticHeadParams] = None):
    """Draw per-step samples from one scan.

    Surface points (with normals) are subsampled from the scan; off-surface
    points are half uniform in the training box, half Gaussian-perturbed
    surface points. Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(scan), size=n_surf)
    surf = scan.points[idx]
    if scan.normals is not None:
        normals = scan.normals[idx]
    elif params is not None:
        normals = synth.oracle_normals(params, surf)
    else:
        normals = None
    n_uniform = n_off // 2
    uniform = rng.uniform(-OFF_SURFACE_BOX, OFF_SURFACE_BOX, (n_uniform, 3))
    jitter_idx = rng.integers(0, len(scan), size=n_off - n_uniform)
    jittered = scan.points[jitter_idx] + rng.normal(0.0, OFF_SURFACE_NOISE,
                                                    (n_off - n_uniform, 3))
    off = np.concatenate([uniform, jittered], axis=0)
    return surf, normals, off


# ---------------------------------------------------------------------------
# Checkpoint container and latent statistics
# ---------------------------------------------------------------------------

@dataclass
class LatentStats:
    id_mean: np.ndarray
    id_std: np.ndarray
    exp_mean: np.ndarray
    exp_std: np.ndarray
    region_mean: np.ndarray     # (K, d_local)
    region_std: np.ndarray

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in
                ("id_mean", "id_std", "exp_mean", "exp_std", "region_mean", "region_std")}

    @staticmethod
    def from_dict(d: dict) -> "LatentStats":
        return LatentStats(**{k: np.array(v, dtype=np.float64) for k, v in d.items()})


@dataclass
class Checkpoint:
    model: HeadModel
    identity_table: torch.Tensor        # (num identities, identity_dim)
    expression_table: torch.Tensor      # (num scans, d_expr)
    identity_labels: List[str]
    scan_keys: List[str]
    scan_identity: List[int]            # scan row -> identity row
    scan_neutral: List[bool]
    config: ModelConfig
    topology: RegionTopology
    stats: Optional[LatentStats] = None
    schema_version: str = SCHEMA_VERSION

    def identity_latent(self, label_or_index) -> torch.Tensor:
        if isinstance(label_or_index, str):
            label_or_index = self.identity_labels.index(label_or_index)
        return self.identity_table[label_or_index].detach().clone()

    def expression_code(self, scan_key: str) -> torch.Tensor:
        return self.expression_table[self.scan_keys.index(scan_key)].detach().clone()

    def parameter_digest(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for name, p in sorted(self.model.state_dict().items()):
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
        h.update(self.identity_table.detach().cpu().numpy().tobytes())
        h.update(self.expression_table.detach().cpu().numpy().tobytes())
        return h.hexdigest()


def latent_statistics(ckpt: Checkpoint) -> LatentStats:
    """Component-wise moments of the latent tables and region-embedding slots."""
    with torch.no_grad():
        ids = ckpt.identity_table.detach()
        exps = ckpt.expression_table.detach()
        emb = ckpt.model.decompose_identity(ids)       # (N, K, d_local)
    return LatentStats(
        id_mean=ids.mean(0).numpy().astype(np.float64),
        id_std=ids.std(0, correction=0).numpy().astype(np.float64),
        exp_mean=exps.mean(0).numpy().astype(np.float64),
        exp_std=exps.std(0, correction=0).numpy().astype(np.float64),
        region_mean=emb.mean(0).numpy().astype(np.float64),
        region_std=emb.std(0, correction=0).numpy().astype(np.float64),
    )


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def compute_scan_losses(model: HeadModel, z_id: torch.Tensor, z_exp: torch.Tensor,
                        record: ScanRecord, gt_anchors: torch.Tensor,
                        n_surf: int, n_off: int, seed: int,
                        normal_norm: str = "l2") -> Dict[str, torch.Tensor]:
    """Unweighted loss components for one scan sample batch."""
    surf, normals, off = sample_training_batch(record.cloud, n_surf, n_off, seed)
    dtype = next(model.parameters()).dtype
    x = torch.from_numpy(np.concatenate([surf, off])).to(dtype)
    n_t = torch.from_numpy(normals).to(dtype) if normals is not None else None

    values, grads, delta, ambient = sdf_with_gradient(model, x, z_id, z_exp, create_graph=True)
    emb = model.effective_embeddings(z_id)
    anchors = model.regress_landmarks(emb)

    return {
        "rec": losses.reconstruction_loss(values[:n_surf], grads[:n_surf], n_t, normal_norm),
        "eik": losses.eikonal_loss(grads),
        "kpt": losses.keypoint_loss(anchors, gt_anchors.to(dtype)),
        "sym": losses.symmetry_loss(emb, model.topology.pairs),
        "reg": losses.latent_reg(z_id, z_exp, ambient),
        "defo": losses.deformation_reg(delta),
    }


def _batch_losses(model, dataset, scan_ids, identity_table, expression_table,
                  id_index, gt_anchor_cache, cfg, rng) -> Dict[str, torch.Tensor]:
    """Loss components for one optimization step over several scans.

    All scans' sample points run through one grouped forward pass; surface
    terms are restricted to the on-surface rows.
    """
    dtype = next(model.parameters()).dtype
    xs, ns, groups, surf_mask = [], [], [], []
    for slot, si in enumerate(scan_ids):
        record = dataset.records[si]
        surf, normals, off = sample_training_batch(
            record.cloud, cfg.n_surf, cfg.n_off, seed=int(rng.integers(0, 2 ** 31)))
        xs.append(np.concatenate([surf, off]))
        ns.append(normals)
        groups.append(np.full(len(surf) + len(off), slot))
        surf_mask.append(np.concatenate([np.ones(len(surf), bool), np.zeros(len(off), bool)]))
    x = torch.from_numpy(np.concatenate(xs)).to(dtype).requires_grad_(True)
    group = torch.from_numpy(np.concatenate(groups)).long()
    surf_rows = torch.from_numpy(np.concatenate(surf_mask))
    normals_t = torch.from_numpy(np.concatenate(ns)).to(dtype)

    ident_rows = torch.tensor([id_index[dataset.records[si].identity_label]
                               for si in scan_ids], dtype=torch.long)
    z_batch = identity_table[ident_rows]
    z_exp_batch = expression_table[torch.tensor(list(scan_ids), dtype=torch.long)]

    y, delta, ambient, emb, anchors = model.forward_grouped(x, z_batch, z_exp_batch, group)
    grads = torch.autograd.grad(y.sum(), x, create_graph=True)[0]
    gt = torch.stack([gt_anchor_cache[si] for si in scan_ids]).to(dtype)

    return {
        "rec": losses.reconstruction_loss(y[surf_rows], grads[surf_rows],
                                          normals_t, cfg.normal_loss_norm),
        "eik": losses.eikonal_loss(grads),
        "kpt": losses.keypoint_loss(anchors, gt),
        "sym": losses.symmetry_loss(emb, model.topology.pairs),
        "reg": losses.latent_reg(z_batch, z_exp_batch, ambient),
        "defo": losses.deformation_reg(delta),
    }


def train(dataset: Union[HeadDataset, str, Path], cfg: TrainConfig,
          log_path: Optional[Union[str, Path]] = None,
          progress: bool = False) -> Checkpoint:
    """Jointly optimize network parameters and latent tables.

    Deterministic for a given seed and hardware class. Emits a JSON-lines
    metrics log when log_path is given. Raises TrainingDiverged on NaN loss
    and ValueError when an identity lacks a neutral scan.
    """
    if not isinstance(dataset, HeadDataset):
        dataset = load_dataset(dataset)
    labels = dataset.identity_labels
    if len(labels) < 2:
        raise ValueError("training needs at least 2 identities")
    for label in labels:
        dataset.neutral_record(label)   # raises if missing

    torch.manual_seed(cfg.seed)
    model_cfg = cfg.resolved_model()
    topology = default_topology()
    model = HeadModel(model_cfg, topology)
    gen = torch.Generator().manual_seed(cfg.seed + 1)

    id_index = dataset.identity_index()
    id_dim = model_cfg.identity_dim(topology.num_regions)
    identity_table = torch.nn.Parameter(
        torch.randn(len(labels), id_dim, generator=gen) * 0.01)
    expression_table = torch.nn.Parameter(
        torch.randn(len(dataset.records), model_cfg.d_expr, generator=gen) * 0.01)
    neutral_rows = torch.tensor([r.is_neutral for r in dataset.records])
    if cfg.freeze_neutral_expression:
        with torch.no_grad():
            expression_table[neutral_rows] = 0.0

    gt_anchor_cache = [
        torch.from_numpy(topology.gt_anchors(r.part_centers())).float()
        for r in dataset.records
    ]

    opt = torch.optim.Adam([
        {"params": model.parameters(), "lr": cfg.lr_net},
        {"params": [identity_table, expression_table], "lr": cfg.lr_latent},
    ])
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda t: 0.05 + 0.95 * 0.5 * (1.0 + math.cos(math.pi * t / max(cfg.steps, 1))))

    log_file = open(log_path, "w") if log_path is not None else None
    t_start = time.time()
    try:
        for step in range(cfg.steps):
            rng = np.random.default_rng((cfg.seed, step))
            scan_ids = rng.choice(len(dataset.records), size=min(cfg.batch_scans,
                                                                 len(dataset.records)),
                                  replace=False)
            opt.zero_grad()
            acc = _batch_losses(model, dataset, scan_ids, identity_table,
                                expression_table, id_index, gt_anchor_cache,
                                cfg, rng)
            loss, report = losses.total_loss(acc, cfg.weights)
            if not math.isfinite(report["total"]):
                raise TrainingDiverged(step, report)
            loss.backward()
            opt.step()
            sched.step()
            if cfg.freeze_neutral_expression:
                with torch.no_grad():
                    expression_table[neutral_rows] = 0.0

            if log_file and (step % cfg.log_every == 0 or step == cfg.steps - 1):
                entry = {"step": step, "seconds": round(time.time() - t_start, 2), **report}
                if cfg.eval_every and step > 0 and step % cfg.eval_every == 0:
                    entry["eval_chamfer"] = _snapshot_chamfer(
                        model, identity_table, dataset, id_index, cfg.eval_resolution)
                log_file.write(json.dumps(entry) + "\n")
                log_file.flush()
            if progress and step % max(1, cfg.steps // 20) == 0:
                print(f"step {step}/{cfg.steps} total={report['total']:.4f}", flush=True)
    finally:
        if log_file:
            log_file.close()

    ckpt = Checkpoint(
        model=model,
        identity_table=identity_table.detach().clone(),
        expression_table=expression_table.detach().clone(),
        identity_labels=labels,
        scan_keys=[r.key for r in dataset.records],
        scan_identity=[id_index[r.identity_label] for r in dataset.records],
        scan_neutral=[r.is_neutral for r in dataset.records],
        config=model_cfg,
        topology=topology,
    )
    ckpt.stats = latent_statistics(ckpt)
    return ckpt


def _snapshot_chamfer(model, identity_table, dataset, id_index, resolution) -> float:
    from .metrics import chamfer, sample_mesh_points
    from .model import extract_mesh

    record = dataset.records[0]
    z = identity_table[id_index[record.identity_label]].detach()
    mesh = extract_mesh(model, z, resolution=resolution)
    if mesh.is_empty:
        return float("inf")
    pts = sample_mesh_points(mesh, 4096, seed=0)
    return chamfer(pts, record.cloud)
