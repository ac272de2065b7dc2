"""Implicit 3D head morphable model with region-local latent editing."""

from .geometry import EncodingConfig, PointCloud, TriMesh, mirror_point, positional_encode
from .model import (HeadModel, ModelConfig, RegionTopology, default_topology,
                    expanded_topology, extract_mesh, fuse_features, fusion_weights)
from .synth import (ExpressionControls, SyntheticHeadParams, make_expression_controls,
                    make_synthetic_identity, marching_cubes, oracle_sdf, sample_surface)
from .training import Checkpoint, TrainConfig, train

__version__ = "0.1.0"
