"""Training objective: surface reconstruction, Eikonal, keypoint, symmetry
and latent regularization terms, combined by a weighted sum.

All terms average over their sample axis so values are batch-size invariant.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import torch


@dataclass
class LossWeights:
    kpt: float = 1.0
    sym: float = 0.01
    reg: float = 1e-4
    eik: float = 0.1
    defo: float = 1e-3   # deformation magnitude prior (anchors the canonical pose)

    def __post_init__(self):
        for name, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"loss weight {name} must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "LossWeights":
        return LossWeights(**d)


def reconstruction_loss(values: torch.Tensor, gradients: torch.Tensor,
                        normals: Optional[torch.Tensor], norm: str = "l2") -> torch.Tensor:
    """mean(|sdf|) + mean(|grad - normal|) over on-surface samples.

    The normal term is dropped when normals are absent (unoriented scans).
    """
    loss = values.abs().mean()
    if normals is not None:
        diff = gradients - normals
        if norm == "l1":
            loss = loss + diff.abs().sum(-1).mean()
        else:
            loss = loss + torch.sqrt((diff * diff).sum(-1) + 1e-24).mean()
    return loss


def eikonal_loss(gradients: torch.Tensor) -> torch.Tensor:
    """mean((|grad| - 1)^2); zero iff every gradient has unit norm."""
    return ((gradients.norm(dim=-1) - 1.0) ** 2).mean()


def keypoint_loss(predicted: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean euclidean anchor error over regions (and any leading batch dims)."""
    if predicted.shape != target.shape:
        raise ValueError(f"anchor shapes differ: {tuple(predicted.shape)} vs {tuple(target.shape)}")
    return (predicted - target).norm(dim=-1).mean()


def symmetry_loss(embeddings: torch.Tensor, pairs: Sequence[Tuple[int, int]]) -> torch.Tensor:
    """Mean squared distance between paired region embeddings."""
    if not pairs:
        return embeddings.new_zeros(())
    total = embeddings.new_zeros(())
    for l, r in pairs:
        total = total + ((embeddings[..., l, :] - embeddings[..., r, :]) ** 2).sum(-1).mean()
    return total / len(pairs)


def latent_reg(z_id: torch.Tensor, z_exp: torch.Tensor,
               ambient: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Squared-norm prior on the codes; ambient warp coordinates fold in."""
    loss = (z_id ** 2).sum(-1).mean() + (z_exp ** 2).sum(-1).mean()
    if ambient is not None:
        loss = loss + (ambient ** 2).sum(-1).mean()
    return loss


def deformation_reg(delta: torch.Tensor) -> torch.Tensor:
    """mean |dx|^2 over warped samples."""
    return (delta ** 2).sum(-1).mean()


def total_loss(components: Dict[str, torch.Tensor], weights: LossWeights
               ) -> Tuple[torch.Tensor, Dict[str, float]]:
    """Weighted sum per the training objective; returns (scalar, decomposition).

    Recognized keys: rec, eik, kpt, sym, reg, defo. Missing terms count as 0.
    The decomposition reports unweighted component values plus the total.
    """
    zero = next(iter(components.values())).new_zeros(())
    rec = components.get("rec", zero)
    eik = components.get("eik", zero)
    kpt = components.get("kpt", zero)
    sym = components.get("sym", zero)
    reg = components.get("reg", zero)
    defo = components.get("defo", zero)
    total = (rec + weights.eik * eik + weights.kpt * kpt
             + weights.sym * sym + weights.reg * reg + weights.defo * defo)
    report = {k: float(v.detach()) for k, v in
              [("rec", rec), ("eik", eik), ("kpt", kpt), ("sym", sym),
               ("reg", reg), ("defo", defo), ("total", total)]}
    return total, report
