"""Minimal numpy CNN framework for the five-layer denoiser."""

from mbdenoise.nn.layers import BatchNorm2d, Conv2d, ReLU, mae_loss, mse_loss
from mbdenoise.nn.network import (
    ConfigError,
    LayerSpec,
    Network,
    load_checkpoint,
    read_checkpoint_header,
    save_checkpoint,
)
from mbdenoise.nn.train import (
    Adam,
    PatchDataset,
    TrainingConfig,
    TrainingDivergedError,
    TrainResult,
    evaluate_loss,
    extract_patches,
    input_scale,
    output_scale,
    slices_dataset,
    train,
)

__all__ = [
    "Adam",
    "BatchNorm2d",
    "ConfigError",
    "Conv2d",
    "LayerSpec",
    "Network",
    "PatchDataset",
    "ReLU",
    "TrainResult",
    "TrainingConfig",
    "TrainingDivergedError",
    "evaluate_loss",
    "extract_patches",
    "input_scale",
    "output_scale",
    "load_checkpoint",
    "mae_loss",
    "mse_loss",
    "read_checkpoint_header",
    "save_checkpoint",
    "slices_dataset",
    "train",
]
