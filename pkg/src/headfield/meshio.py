"""File formats: binary little-endian PLY point clouds, ASCII OBJ meshes.

Per-vertex scalar channels ride in a sidecar JSON array aligned by vertex
index (OBJ has no portable scalar attribute).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .geometry import PointCloud, TriMesh

_PLY_HEADER = """ply
format binary_little_endian 1.0
element vertex {n}
property float x
property float y
property float z
{normal_props}end_header
"""
_NORMAL_PROPS = "property float nx\nproperty float ny\nproperty float nz\n"


def save_ply(cloud: PointCloud, path: Union[str, Path]) -> None:
    path = Path(path)
    has_normals = cloud.normals is not None
    header = _PLY_HEADER.format(
        n=len(cloud), normal_props=_NORMAL_PROPS if has_normals else ""
    )
    data = cloud.points.astype("<f4")
    if has_normals:
        data = np.concatenate([data, cloud.normals.astype("<f4")], axis=1)
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(np.ascontiguousarray(data).tobytes())


def load_ply(path: Union[str, Path]) -> PointCloud:
    return parse_ply(Path(path).read_bytes(), name=str(path))


def parse_ply(raw: bytes, name: str = "<bytes>") -> PointCloud:
    path = name
    end = raw.find(b"end_header\n")
    if end < 0:
        raise ValueError(f"{path}: not a PLY file (missing end_header)")
    header = raw[:end].decode("ascii").splitlines()
    if not header or header[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    if not any("binary_little_endian" in line for line in header):
        raise ValueError(f"{path}: only binary little-endian PLY is supported")
    n = None
    props = []
    for line in header:
        tokens = line.split()
        if tokens[:2] == ["element", "vertex"]:
            n = int(tokens[2])
        elif tokens[:1] == ["property"] and n is not None:
            props.append(tokens[2])
    if n is None:
        raise ValueError(f"{path}: missing vertex element")
    expected = ["x", "y", "z"] + (["nx", "ny", "nz"] if len(props) == 6 else [])
    if props != expected:
        raise ValueError(f"{path}: unsupported property layout {props}")
    body = raw[end + len(b"end_header\n"):]
    width = len(props)
    arr = np.frombuffer(body, dtype="<f4", count=n * width).reshape(n, width).astype(np.float64)
    normals = arr[:, 3:6] if width == 6 else None
    return PointCloud(arr[:, :3], normals)


def save_obj(mesh: TriMesh, path: Union[str, Path],
             sidecar: Optional[Union[str, Path]] = None) -> None:
    """Write v/f records; vertex scalars go to `sidecar` (default <path>.json)."""
    path = Path(path)
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.8f} {v[1]:.8f} {v[2]:.8f}")
    for f in mesh.faces:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    path.write_text("\n".join(lines) + "\n")
    if mesh.vertex_scalars is not None:
        side = Path(sidecar) if sidecar is not None else path.with_suffix(path.suffix + ".json")
        side.write_text(json.dumps([float(s) for s in mesh.vertex_scalars]))


def obj_text(mesh: TriMesh) -> str:
    out = []
    for v in mesh.vertices:
        out.append(f"v {v[0]:.8f} {v[1]:.8f} {v[2]:.8f}")
    for f in mesh.faces:
        out.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    return "\n".join(out) + "\n"


def load_obj(path: Union[str, Path], sidecar: Optional[Union[str, Path]] = None) -> TriMesh:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "v":
            verts.append([float(t) for t in tokens[1:4]])
        elif tokens[0] == "f":
            faces.append([int(t.split("/")[0]) - 1 for t in tokens[1:4]])
    scalars = None
    side = Path(sidecar) if sidecar is not None else Path(path).with_suffix(Path(path).suffix + ".json")
    if side.exists():
        scalars = np.array(json.loads(side.read_text()), dtype=np.float64)
    return TriMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                   np.array(faces, dtype=np.int64).reshape(-1, 3),
                   scalars)
