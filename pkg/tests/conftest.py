"""Shared fixtures.

Trained checkpoints are expensive on CPU, so they are built once and cached
under .cache/ keyed by their training configuration. Deleting .cache forces a
rebuild.
"""

import json
from pathlib import Path

import pytest
import torch

torch.set_num_threads(2)

ROOT = Path(__file__).resolve().parent.parent
CACHE = ROOT / ".cache"


def _tiny_train_config():
    from headfield.losses import LossWeights
    from headfield.model import ModelConfig
    from headfield.training import TrainConfig

    model = ModelConfig(d_global=32, d_local=8, d_expr=4, num_bands=2,
                        local_width=32, local_feature_dim=32, fusion_width=32,
                        deformer_layers=4, deformer_width=48, landmark_width=64)
    return TrainConfig(steps=150, batch_scans=2, n_surf=128, n_off=128, seed=0,
                       weights=LossWeights(), model=model, log_every=50,
                       eval_every=0)


def _build_or_load(ckpt_dir: Path, data_dir: Path, cfg, ids, exprs, seed, points):
    from headfield import checkpoint as ckpt_io
    from headfield import training

    cfg_path = ckpt_dir / "train_config.json"
    want = json.dumps(cfg.to_dict(), sort_keys=True)
    if cfg_path.exists() and cfg_path.read_text() == want:
        return ckpt_io.load_checkpoint(ckpt_dir)
    if not (data_dir / "manifest.ok").exists():
        training.synthesize_dataset(data_dir, ids, exprs, seed=seed, points_per_scan=points)
        (data_dir / "manifest.ok").write_text("ok")
    ckpt = training.train(data_dir, cfg)
    ckpt_io.save_checkpoint(ckpt, ckpt_dir)
    cfg_path.write_text(want)
    return ckpt


@pytest.fixture(scope="session")
def tiny_ckpt():
    """A small trained checkpoint for mechanics tests (not quality tests)."""
    CACHE.mkdir(exist_ok=True)
    return _build_or_load(CACHE / "ckpt_tiny", CACHE / "data_tiny",
                          _tiny_train_config(), ids=2, exprs=2, seed=0, points=1024)


@pytest.fixture(scope="session")
def tiny_dataset():
    from headfield.training import load_dataset

    CACHE.mkdir(exist_ok=True)
    data_dir = CACHE / "data_tiny"
    if not (data_dir / "manifest.ok").exists():
        from headfield.training import synthesize_dataset
        synthesize_dataset(data_dir, 2, 2, seed=0, points_per_scan=1024)
        (data_dir / "manifest.ok").write_text("ok")
    return load_dataset(data_dir)


# ---------------------------------------------------------------------------
# Desk-scale assets for the acceptance suite (16 identities x 4 expressions).
# First build takes ~1.5h on 2 CPUs; afterwards everything loads from .cache.
# ---------------------------------------------------------------------------

DESK_STEPS = 6000
ABLATION_STEPS = 1200


def _ensure_dataset(data_dir: Path, ids, exprs, seed, points=4096):
    from headfield.training import synthesize_dataset

    expected = ids * exprs
    if len(list(data_dir.glob("*.ply"))) != expected:
        synthesize_dataset(data_dir, ids, exprs, seed=seed, points_per_scan=points)
    return data_dir


def _desk_config(steps, ablation=None):
    from headfield.training import desk_train_config

    cfg = desk_train_config(steps=steps)
    cfg.ablation = ablation
    return cfg


def _train_cached(ckpt_dir: Path, data_dir: Path, cfg, log_path=None):
    from headfield import checkpoint as ckpt_io
    from headfield import training

    cfg_path = ckpt_dir / "train_config.json"
    want = json.dumps(cfg.to_dict(), sort_keys=True)
    if cfg_path.exists() and json.loads(cfg_path.read_text()) == json.loads(want):
        return ckpt_io.load_checkpoint(ckpt_dir)
    ckpt = training.train(data_dir, cfg, log_path=log_path)
    ckpt_io.save_checkpoint(ckpt, ckpt_dir)
    cfg_path.write_text(want)
    return ckpt


@pytest.fixture(scope="session")
def desk_data():
    CACHE.mkdir(exist_ok=True)
    return _ensure_dataset(CACHE / "data_desk", 16, 4, seed=0)


@pytest.fixture(scope="session")
def holdout_data():
    CACHE.mkdir(exist_ok=True)
    return _ensure_dataset(CACHE / "data_holdout", 4, 3, seed=100)


@pytest.fixture(scope="session")
def desk_ckpt(desk_data):
    return _train_cached(CACHE / "ckpt_desk", desk_data, _desk_config(DESK_STEPS),
                         log_path=CACHE / "log_desk.jsonl")


@pytest.fixture(scope="session")
def desk_dataset(desk_data):
    from headfield.training import load_dataset

    return load_dataset(desk_data)


@pytest.fixture(scope="session")
def holdout_dataset(holdout_data):
    from headfield.training import load_dataset

    return load_dataset(holdout_data)


@pytest.fixture(scope="session")
def ablation_ckpts(desk_data):
    out = {}
    for ablation in (None, "local_latent_only", "no_fusion_net", "no_local_canonical"):
        name = ablation or "default"
        out[name] = _train_cached(CACHE / f"ckpt_abl_{name}", desk_data,
                                  _desk_config(ABLATION_STEPS, ablation))
    return out
