"""Heterogeneous mask+box autoencoder: model, optimizer, training, I/O."""

from .adadelta import AdadeltaState, adadelta_init, adadelta_step
from .checkpoint import load_checkpoint, save_checkpoint
from .model import (
    AutoencoderConfig,
    AutoencoderParams,
    LatentCode,
    backward,
    forward,
    glorot_init,
    loss,
    loss_and_grads,
)
from .preprocess import preprocess_mask
from .train import (
    TrainingDiverged,
    build_training_set,
    calibrate_embed_threshold,
    embed,
    embed_batch,
    train,
)

__all__ = [
    "AdadeltaState",
    "adadelta_init",
    "adadelta_step",
    "load_checkpoint",
    "save_checkpoint",
    "AutoencoderConfig",
    "AutoencoderParams",
    "LatentCode",
    "backward",
    "forward",
    "glorot_init",
    "loss",
    "loss_and_grads",
    "preprocess_mask",
    "TrainingDiverged",
    "build_training_set",
    "calibrate_embed_threshold",
    "embed",
    "embed_batch",
    "train",
]
