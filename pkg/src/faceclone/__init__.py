"""faceclone: facial expression cloning with skinning-localized codes."""

from .mesh import Mesh, MeshError, load_mesh, normalize_mesh, save_mesh, vertex_features, vertex_normals
from .spectral import OperatorCache, SpectralOperators, compute_spectral_operators
from .geometry import RigidAlignment, deformation_jacobians, mse, procrustes_align
from .rig import BlendshapeRig, SegmentationMap, evaluate_rig, load_external_rig, make_toy_rig, save_rig
from .data import (
    CoefficientSample,
    DatasetConfig,
    RigDataset,
    build_dataset,
    load_dataset,
    materialize,
    sample_expression_onehot,
    sample_expression_uniform,
    sample_identity_normal,
    save_dataset,
)
from .model import ExpressionCloner, ModelConfig, build_model, deform, localize
from .losses import LossReport, LossWeights
from .checkpoint import load_checkpoint, save_checkpoint
from .training import TrainConfig, ablation_suite, train, training_step
from .evaluation import (
    eval_inverse_rig,
    eval_segment_mse,
    eval_self_retarget,
    least_squares_invrig,
)

__version__ = "0.1.0"

__all__ = [
    "Mesh", "MeshError", "load_mesh", "save_mesh", "normalize_mesh",
    "vertex_normals", "vertex_features",
    "SpectralOperators", "OperatorCache", "compute_spectral_operators",
    "RigidAlignment", "procrustes_align", "mse", "deformation_jacobians",
    "BlendshapeRig", "SegmentationMap", "make_toy_rig", "evaluate_rig",
    "save_rig", "load_external_rig",
    "CoefficientSample", "DatasetConfig", "RigDataset", "build_dataset",
    "save_dataset", "load_dataset", "materialize",
    "sample_expression_uniform", "sample_expression_onehot", "sample_identity_normal",
    "ExpressionCloner", "ModelConfig", "build_model", "localize", "deform",
    "LossWeights", "LossReport",
    "save_checkpoint", "load_checkpoint",
    "TrainConfig", "train", "training_step", "ablation_suite",
    "eval_self_retarget", "eval_segment_mse", "least_squares_invrig", "eval_inverse_rig",
    "__version__",
]
