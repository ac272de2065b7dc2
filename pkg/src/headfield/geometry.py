"""Core geometric containers: point clouds, triangle meshes, positional encoding.

Coordinates are unitless, head normalized to fit the unit ball. The sagittal
symmetry plane is x=0, y is up, the face looks toward +z.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass
class PointCloud:
    """N points with optional unit normals."""

    points: np.ndarray                      # (N, 3) float
    normals: Optional[np.ndarray] = None    # (N, 3) unit vectors

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if self.normals.shape != self.points.shape:
                raise ValueError("normals shape must match points shape")

    def __len__(self) -> int:
        return self.points.shape[0]

    def validate(self, tol: float = 1e-5) -> None:
        """Check the unit-normal invariant."""
        if self.normals is not None and len(self) > 0:
            norms = np.linalg.norm(self.normals, axis=1)
            worst = float(np.abs(norms - 1.0).max())
            if worst > tol:
                raise ValueError(f"normals deviate from unit norm by {worst:.2e}")


@dataclass
class TriMesh:
    """Triangle mesh with an optional per-vertex scalar channel."""

    vertices: np.ndarray                          # (V, 3)
    faces: np.ndarray                             # (F, 3) int indices
    vertex_scalars: Optional[np.ndarray] = None   # (V,) displacement or color id

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.vertex_scalars is not None:
            self.vertex_scalars = np.asarray(self.vertex_scalars, dtype=np.float64).reshape(-1)

    @property
    def is_empty(self) -> bool:
        return self.vertices.shape[0] == 0 or self.faces.shape[0] == 0

    def face_normals(self, normalized: bool = True) -> np.ndarray:
        v = self.vertices
        f = self.faces
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        if normalized:
            n = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-30)
        return n

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals(normalized=False), axis=1)

    def validate(self) -> None:
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face indices out of range")
        if self.vertex_scalars is not None and len(self.vertex_scalars) != len(self.vertices):
            raise ValueError("vertex_scalars length must match vertex count")


def empty_mesh() -> TriMesh:
    return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


@dataclass
class EncodingConfig:
    """Sinusoidal frequency-band configuration; output is 2L+1 values per coordinate."""

    num_bands: int = 7

    def __post_init__(self):
        if self.num_bands < 0:
            raise ValueError("num_bands must be >= 0")

    def output_dim(self, input_dim: int = 3) -> int:
        return input_dim * (2 * self.num_bands + 1)


def positional_encode(x, cfg: EncodingConfig):
    """Map coordinates to (x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)).

    Works on numpy arrays and torch tensors alike; the band axis is appended
    to the last dimension, so (..., D) maps to (..., D*(2L+1)).
    """
    is_torch = hasattr(x, "requires_grad")
    if is_torch:
        import torch

        sin, cos, cat, pi = torch.sin, torch.cos, lambda ts: torch.cat(ts, dim=-1), np.pi
    else:
        x = np.asarray(x, dtype=np.float64)
        sin, cos, cat, pi = np.sin, np.cos, lambda ts: np.concatenate(ts, axis=-1), np.pi
    parts = [x]
    for band in range(cfg.num_bands):
        scaled = (2.0 ** band) * pi * x
        parts.append(sin(scaled))
        parts.append(cos(scaled))
    return cat(parts)


def mirror_point(x):
    """Reflect across the sagittal plane x0=0: (x0, x1, x2) -> (-x0, x1, x2)."""
    is_torch = hasattr(x, "requires_grad")
    if is_torch:
        import torch

        sign = torch.tensor([-1.0, 1.0, 1.0], dtype=x.dtype, device=x.device)
        return x * sign
    x = np.asarray(x, dtype=np.float64)
    return x * np.array([-1.0, 1.0, 1.0])
