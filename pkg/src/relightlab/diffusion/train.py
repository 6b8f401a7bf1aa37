"""Noise-prediction training for the conditional denoiser.

Everything runs on the CPU in float32; gradients come from the hand-written
backward passes in layers.py, so there is no autograd framework underneath.
Checkpoints are plain .npz archives with a JSON metadata blob.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, NumericError
from .schedule import NoiseSchedule, make_linear_schedule, q_sample
from .unet import Denoiser, DenoiserConfig


@dataclass
class TrainConfig:
    steps: int = 3000
    batch_size: int = 16
    lr: float = 1e-3
    lr_final: float = 1e-4  # cosine-decayed floor; set equal to lr for constant
    warmup: int = 200
    grad_clip: float = 1.0
    ema_decay: float = 0.999  # 0 disables EMA
    seed: int = 0
    log_every: int = 50

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup, then cosine from lr down to lr_final at the last step."""
    if step < cfg.warmup:
        return cfg.lr * (step + 1) / max(1, cfg.warmup)
    span = max(1, cfg.steps - cfg.warmup)
    u = min(1.0, (step - cfg.warmup) / span)
    return cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1.0 + np.cos(np.pi * u))


class Adam:
    """Bias-corrected Adam over the denoiser's parameter list."""

    def __init__(self, params, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value) for p in self.params}

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p in self.params:
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def clip_global_norm(params, max_norm: float) -> float:
    total = 0.0
    for p in params:
        total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = np.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            p.grad *= scale
    return float(norm)


def to_model_range(img):
    """Display-space [0,1] images to the [-1,1] range the denoiser sees."""
    return np.asarray(img, np.float32) * 2.0 - 1.0


def from_model_range(x):
    return np.clip((np.asarray(x) + 1.0) * 0.5, 0.0, 1.0)


def pack_conditioning(inputs, ldr, hdr):
    """Channel-concatenated conditioning block, already in model range."""
    return np.concatenate(
        [to_model_range(inputs), to_model_range(ldr), to_model_range(hdr)], axis=-1
    )


def eps_loss_step(denoiser: Denoiser, schedule: NoiseSchedule, x0, cond, t, eps):
    """One forward/backward pass; leaves gradients on the denoiser params.

    x0 is the clean target in [-1,1]; cond is the 9-channel conditioning
    block. Returns the scalar noise-prediction MSE.
    """
    x_t = q_sample(x0, t, eps, schedule)
    net_in = np.concatenate([x_t, cond], axis=-1)
    pred = denoiser.forward(net_in, t)
    diff = pred - eps
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    if not np.isfinite(loss):
        raise NumericError(f"non-finite training loss {loss!r}")
    denoiser.zero_grad()
    denoiser.backward((2.0 / diff.size) * diff.astype(denoiser.dtype))
    return loss


class Ema:
    def __init__(self, params, decay: float):
        self.decay = decay
        self.updates = 0
        self.shadow = {p.name: p.value.copy() for p in params}

    def update(self, params):
        # warmup keeps the random init from dominating short runs
        self.updates += 1
        d = min(self.decay, (1.0 + self.updates) / (10.0 + self.updates))
        for p in params:
            s = self.shadow[p.name]
            s *= d
            s += (1.0 - d) * p.value

    def copy_to(self, params):
        for p in params:
            p.value[...] = self.shadow[p.name]


def train(
    denoiser: Denoiser,
    pairs,
    cfg: TrainConfig,
    schedule: NoiseSchedule | None = None,
    log_path: str | None = None,
):
    """Train on a PairSet; returns (losses, ema or None).

    Deterministic for a fixed seed: batch indices, timesteps, and noise all
    come from one seeded generator.
    """
    if len(pairs) < cfg.batch_size:
        raise DataError("fewer pairs than one batch")
    schedule = schedule or make_linear_schedule()
    rng = np.random.default_rng(cfg.seed)
    params = denoiser.params()
    opt = Adam(params, cfg.lr)
    ema = Ema(params, cfg.ema_decay) if cfg.ema_decay > 0 else None
    x0_all = to_model_range(pairs.targets)
    cond_all = pack_conditioning(pairs.inputs, pairs.ldr, pairs.hdr)
    losses = []
    writer = None
    fh = None
    if log_path:
        os.makedirs(os.path.dirname(os.path.abspath(log_path)), exist_ok=True)
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "lr", "wall_time"])
    t_start = time.time()
    try:
        for step in range(1, cfg.steps + 1):
            idx = rng.integers(0, len(pairs), size=cfg.batch_size)
            t = rng.integers(1, schedule.T + 1, size=cfg.batch_size)
            eps = rng.standard_normal(
                (cfg.batch_size,) + x0_all.shape[1:]
            ).astype(np.float32)
            loss = eps_loss_step(
                denoiser, schedule, x0_all[idx], cond_all[idx], t, eps
            )
            clip_global_norm(params, cfg.grad_clip)
            lr = lr_at(step - 1, cfg)
            opt.step(lr=lr)
            if ema is not None:
                ema.update(params)
            losses.append(loss)
            if writer and (step % cfg.log_every == 0 or step == cfg.steps):
                writer.writerow(
                    [step, f"{loss:.6f}", f"{lr:.6g}", f"{time.time() - t_start:.2f}"]
                )
                fh.flush()
    finally:
        if fh:
            fh.close()
    return losses, ema


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path: str, denoiser: Denoiser, ema: Ema | None = None, extra: dict | None = None):
    meta = {
        "model": denoiser.config.to_dict(),
        "has_ema": ema is not None,
        "extra": extra or {},
    }
    arrays = {"param/" + p.name: p.value.astype(np.float32) for p in denoiser.params()}
    if ema is not None:
        arrays.update(
            {"ema/" + k: v.astype(np.float32) for k, v in ema.shadow.items()}
        )
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), np.uint8)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    np.savez(path, **arrays)


def load_checkpoint(path: str, use_ema: bool = True) -> Denoiser:
    try:
        blob = np.load(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if "meta" not in blob:
        raise DataError(f"{path} is not a denoiser checkpoint")
    meta = json.loads(bytes(blob["meta"]).decode())
    model = Denoiser(DenoiserConfig.from_dict(meta["model"]))
    prefix = "ema/" if (use_ema and meta.get("has_ema")) else "param/"
    for p in model.params():
        key = prefix + p.name
        if key not in blob:
            raise DataError(f"checkpoint missing tensor {key}")
        arr = blob[key]
        if arr.shape != p.value.shape:
            raise DataError(
                f"checkpoint tensor {key} has shape {arr.shape}, expected {p.value.shape}"
            )
        p.value[...] = arr.astype(model.dtype)
    return model
