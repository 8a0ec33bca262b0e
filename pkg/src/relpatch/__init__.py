"""Self-supervised patch-relation tasks for Vision Transformers, on a small numpy autodiff core."""

from .backbone import MODEL_PRESETS, ModelConfig, ViTEncoder, forward, load_checkpoint, param_count, preset, save_checkpoint
from .data import ImageRecord, ImageSet, SyntheticSpec, load_cifar10, make_synthetic
from .errors import (
    ConfigurationError,
    DimensionError,
    InfeasibleError,
    IngestionError,
    LoadError,
    NumericError,
    RelPatchError,
)
from .heads import SSLHeads, TaskSet, total_loss
from .numerics import Tensor, grad_check, no_grad
from .patch_grid import GridPos, Lattice, MegaPatchLayout, PatchGrid, patchify, sample_megapatch_layout, unpatchify
from .ssl_targets import TargetSet, build_target_set, permute_targets
from .training import TrainPlan, Trainer, evaluate, run

__version__ = "0.1.0"

__all__ = [
    "MODEL_PRESETS", "ModelConfig", "ViTEncoder", "forward", "load_checkpoint", "param_count", "preset",
    "save_checkpoint", "ImageRecord", "ImageSet", "SyntheticSpec", "load_cifar10", "make_synthetic",
    "ConfigurationError", "DimensionError", "InfeasibleError", "IngestionError", "LoadError", "NumericError",
    "RelPatchError", "SSLHeads", "TaskSet", "total_loss", "Tensor", "grad_check", "no_grad", "GridPos", "Lattice",
    "MegaPatchLayout", "PatchGrid", "patchify", "sample_megapatch_layout", "unpatchify", "TargetSet",
    "build_target_set", "permute_targets", "TrainPlan", "Trainer", "evaluate", "run",
]
