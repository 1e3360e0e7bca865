"""Neural building blocks: autodiff tensor engine, denoiser, Adam."""

from .adam import AdamState, adam_step
from .denoiser import Denoiser, DenoiserConfig, time_embedding
from .tensor import Tensor, conv2d, group_norm, linear, mse_loss, silu, upsample_nearest

__all__ = [
    "AdamState",
    "adam_step",
    "Denoiser",
    "DenoiserConfig",
    "time_embedding",
    "Tensor",
    "conv2d",
    "group_norm",
    "linear",
    "mse_loss",
    "silu",
    "upsample_nearest",
]
