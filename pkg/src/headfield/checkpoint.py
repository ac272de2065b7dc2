"""Checkpoint directory format: manifest.json + params.bin.

The manifest carries the schema version, model config, topology, latent
statistics, labels, and a tensor index (name/shape/offset/length into the
blob). The blob is raw little-endian float32, tensors concatenated in sorted
name order, so identical checkpoints serialize to identical bytes.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Dict, Union

import numpy as np
import torch

from .model import HeadModel, ModelConfig, RegionTopology
from .training import Checkpoint, LatentStats, SCHEMA_VERSION

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "params.bin"
LOCK_NAME = ".lock"

_TABLE_TENSORS = ("identity_table", "expression_table")


class CheckpointError(RuntimeError):
    pass


class SchemaMismatch(CheckpointError):
    pass


def _named_tensors(ckpt: Checkpoint) -> Dict[str, np.ndarray]:
    out = {f"model.{k}": v.detach().cpu().numpy() for k, v in ckpt.model.state_dict().items()}
    out["identity_table"] = ckpt.identity_table.detach().cpu().numpy()
    out["expression_table"] = ckpt.expression_table.detach().cpu().numpy()
    return out


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> None:
    """Write the checkpoint directory; byte-stable for identical inputs.

    A lock file guards against concurrent writers to the same directory.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lock = path / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise CheckpointError(f"checkpoint directory {path} is locked by another writer")
    try:
        os.close(fd)
        tensors = _named_tensors(ckpt)
        index = {}
        offset = 0
        chunks = []
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            raw = arr.tobytes()
            index[name] = {"shape": list(tensors[name].shape),
                           "offset": offset, "length": len(raw)}
            chunks.append(raw)
            offset += len(raw)
        manifest = {
            "schema_version": ckpt.schema_version,
            "model_config": ckpt.config.to_dict(),
            "topology": ckpt.topology.to_dict(),
            "identity_labels": ckpt.identity_labels,
            "scan_keys": ckpt.scan_keys,
            "scan_identity": ckpt.scan_identity,
            "scan_neutral": ckpt.scan_neutral,
            "latent_stats": ckpt.stats.to_dict() if ckpt.stats is not None else None,
            "tensors": index,
        }
        (path / MANIFEST_NAME).write_text(json.dumps(manifest, sort_keys=True, indent=1))
        (path / BLOB_NAME).write_bytes(b"".join(chunks))
    finally:
        lock.unlink(missing_ok=True)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Read a checkpoint directory, validating schema and blob bounds."""
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise CheckpointError(f"{path}: missing {MANIFEST_NAME}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{path}: corrupted manifest: {exc}") from exc
    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaMismatch(f"{path}: schema version {version!r}, expected {SCHEMA_VERSION!r}")

    blob = (path / BLOB_NAME).read_bytes()
    config = ModelConfig.from_dict(manifest["model_config"])
    topology = RegionTopology.from_dict(manifest["topology"])
    model = HeadModel(config, topology)

    tensors: Dict[str, torch.Tensor] = {}
    for name, entry in manifest["tensors"].items():
        offset, length = entry["offset"], entry["length"]
        if offset < 0 or offset + length > len(blob):
            raise CheckpointError(f"{path}: tensor {name} exceeds blob bounds "
                                  f"(offset {offset}, length {length}, blob {len(blob)})")
        arr = np.frombuffer(blob, dtype="<f4", count=length // 4, offset=offset)
        tensors[name] = torch.from_numpy(arr.copy()).reshape(entry["shape"])

    state = {}
    expected = set(model.state_dict())
    for name, tensor in tensors.items():
        if name.startswith("model."):
            key = name[len("model."):]
            if key not in expected:
                raise CheckpointError(f"{path}: unknown tensor name {name!r}")
            state[key] = tensor
    missing = expected - set(state)
    if missing:
        raise CheckpointError(f"{path}: blob is missing model tensors: {sorted(missing)[:4]}")
    model.load_state_dict(state)
    for t in _TABLE_TENSORS:
        if t not in tensors:
            raise CheckpointError(f"{path}: blob is missing {t}")

    stats = manifest.get("latent_stats")
    return Checkpoint(
        model=model,
        identity_table=tensors["identity_table"],
        expression_table=tensors["expression_table"],
        identity_labels=list(manifest["identity_labels"]),
        scan_keys=list(manifest["scan_keys"]),
        scan_identity=list(manifest["scan_identity"]),
        scan_neutral=list(manifest["scan_neutral"]),
        config=config,
        topology=topology,
        stats=LatentStats.from_dict(stats) if stats is not None else None,
        schema_version=version,
    )
