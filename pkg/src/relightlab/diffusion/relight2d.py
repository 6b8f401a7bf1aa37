"""Sampling-side relighting: conditioning assembly, DDIM, perturb-denoise."""

from __future__ import annotations

import numpy as np

from .. import envmap as em
from ..errors import DataError
from .schedule import NoiseSchedule, ddim_stride_indices, q_sample
from .train import from_model_range, pack_conditioning
from .unet import Denoiser

ABLATIONS = ("none", "no-ldr", "no-hdr", "no-rotation")


def make_conditioning(env: em.EnvMap, rotation, res: int, ablate: str = "none"):
    """Per-image (E_L, E_H) maps at the model resolution, in [0,1].

    The LDR map is quantized to 8 bits so on-the-fly conditioning matches
    what the training pipeline read back from PNG files.
    """
    if ablate not in ABLATIONS:
        raise DataError(f"unknown ablation {ablate!r}")
    rot = np.eye(3) if ablate == "no-rotation" else rotation
    ldr, hdr, _scale = em.conditioning_maps(env, rot, res)
    ldr = np.rint(np.clip(ldr, 0.0, 1.0) * 255.0) / 255.0
    hdr = np.clip(hdr, 0.0, 1.0)
    if ablate == "no-ldr":
        ldr = np.zeros_like(ldr)
    elif ablate == "no-hdr":
        hdr = np.zeros_like(hdr)
    return ldr, hdr


def _predict_eps(denoiser: Denoiser, x, cond, t_scalar: int):
    t = np.full((x.shape[0],), t_scalar, dtype=np.int64)
    return denoiser.forward(np.concatenate([x, cond], axis=-1), t)


def ddim_step(x, eps_hat, t_from: int, t_to: int, schedule: NoiseSchedule):
    """Deterministic DDIM update t_from -> t_to with clipped x0 estimate."""
    ab_f = schedule.alpha_bars[t_from]
    ab_t = schedule.alpha_bars[t_to]
    x0_hat = (x - np.sqrt(1.0 - ab_f) * eps_hat) / np.sqrt(ab_f)
    x0_hat = np.clip(x0_hat, -1.0, 1.0)
    return np.sqrt(ab_t) * x0_hat + np.sqrt(1.0 - ab_t) * eps_hat, x0_hat


def ddim_sample(
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    cond,
    n_steps: int = 25,
    seed: int = 0,
    x_init=None,
    t_from: int | None = None,
):
    """Sample images given conditioning; returns display-space [0,1] arrays.

    cond: (B,H,W,9) block from pack_conditioning. x_init, when given, is the
    already-noised latent at t_from (used by perturb_denoise); otherwise
    sampling starts from pure noise at t_from = T.
    """
    cond = np.asarray(cond, np.float32)
    if cond.ndim != 4 or cond.shape[-1] != 9:
        raise ValueError(f"conditioning must be (B,H,W,9), got {cond.shape}")
    t_from = schedule.T if t_from is None else int(t_from)
    rng = np.random.default_rng(seed)
    if x_init is None:
        x = rng.standard_normal(cond.shape[:3] + (3,)).astype(np.float32)
    else:
        x = np.asarray(x_init, np.float32)
    ts = ddim_stride_indices(t_from, n_steps)
    x0_hat = x
    for k in range(len(ts) - 1):
        eps_hat = _predict_eps(denoiser, x, cond, ts[k])
        x, x0_hat = ddim_step(x, eps_hat, ts[k], ts[k + 1], schedule)
    return from_model_range(x0_hat)


def perturb_denoise(
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    images,
    cond,
    t_star: float,
    n_steps: int = 10,
    seed: int = 0,
):
    """Noise display-space images to strength t_star in [0,1], then DDIM back.

    t_star maps to the discrete index round(t_star * T); index 0 returns the
    input unchanged. Small t_star only lightly reshuffles appearance, which
    is what the 3D refinement stage relies on.
    """
    if not 0.0 <= t_star <= 1.0:
        raise ValueError(f"t_star must be in [0,1], got {t_star}")
    images = np.asarray(images, np.float32)
    index = int(np.rint(t_star * schedule.T))
    if index == 0:
        return np.clip(images, 0.0, 1.0)
    rng = np.random.default_rng(seed)
    x0 = images * 2.0 - 1.0
    t = np.full((images.shape[0],), index, dtype=np.int64)
    eps = rng.standard_normal(x0.shape).astype(np.float32)
    x_t = q_sample(x0, t, eps, schedule)
    return ddim_sample(
        denoiser, schedule, cond, n_steps=n_steps, seed=seed + 1,
        x_init=x_t, t_from=index,
    )


def relight_image(
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    input_display,
    env: em.EnvMap,
    rotation,
    n_steps: int = 25,
    seed: int = 0,
    ablate: str = "none",
):
    """Relight one display-space [0,1] input image under a world-frame env."""
    inp = np.asarray(input_display, np.float32)
    if inp.ndim != 3 or inp.shape[-1] != 3 or inp.shape[0] != inp.shape[1]:
        raise ValueError(f"input must be square (R,R,3), got {inp.shape}")
    res = inp.shape[0]
    ldr, hdr = make_conditioning(env, rotation, res, ablate)
    cond = pack_conditioning(inp[None], ldr[None], hdr[None])
    out = ddim_sample(denoiser, schedule, cond, n_steps=n_steps, seed=seed)
    return out[0]
