"""Hyperspectral image classification with a gate-shift-fuse stem and a token transformer."""

from .data import HSICube, LabelMap, PatchSet, SplitSpec, extract_patches, load_cube, save_cube, stratified_split
from .gradcheck import grad_check
from .gsf import GSFParams, gsf_forward, spectral_shift
from .metrics import MetricsReport, confusion_matrix, metrics_from_confusion
from .model import ModelConfig, ModelParams, init_params, model_forward, model_logits
from .pca import PCAModel, pca_fit, pca_transform
from .tensor import (
    DEFAULT_DTYPE,
    NumericError,
    ShapeError,
    Tensor,
    backward,
    no_grad,
)
from .train import AdamState, TrainConfig, adam_step, evaluate, train_loop

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "DEFAULT_DTYPE",
    "GSFParams",
    "HSICube",
    "LabelMap",
    "MetricsReport",
    "ModelConfig",
    "ModelParams",
    "NumericError",
    "PCAModel",
    "PatchSet",
    "ShapeError",
    "SplitSpec",
    "Tensor",
    "TrainConfig",
    "adam_step",
    "backward",
    "confusion_matrix",
    "evaluate",
    "extract_patches",
    "grad_check",
    "gsf_forward",
    "init_params",
    "load_cube",
    "metrics_from_confusion",
    "model_forward",
    "model_logits",
    "no_grad",
    "pca_fit",
    "pca_transform",
    "save_cube",
    "spectral_shift",
    "stratified_split",
    "train_loop",
    "__version__",
]
