"""Pixel-space conditional diffusion relighter (numpy, hand-written grads)."""

from .relight2d import (
    ddim_sample,
    ddim_step,
    make_conditioning,
    perturb_denoise,
    relight_image,
)
from .schedule import (
    NoiseSchedule,
    ddim_stride_indices,
    make_linear_schedule,
    q_sample,
)
from .train import (
    Adam,
    Ema,
    TrainConfig,
    eps_loss_step,
    load_checkpoint,
    lr_at,
    pack_conditioning,
    save_checkpoint,
    train,
)
from .unet import Denoiser, DenoiserConfig

__all__ = [
    "Adam",
    "Denoiser",
    "DenoiserConfig",
    "Ema",
    "NoiseSchedule",
    "TrainConfig",
    "ddim_sample",
    "ddim_step",
    "ddim_stride_indices",
    "eps_loss_step",
    "load_checkpoint",
    "lr_at",
    "make_conditioning",
    "make_linear_schedule",
    "pack_conditioning",
    "perturb_denoise",
    "q_sample",
    "relight_image",
    "save_checkpoint",
    "train",
]
