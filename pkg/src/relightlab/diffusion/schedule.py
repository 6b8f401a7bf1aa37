"""Forward-noising schedule and the DDPM/DDIM index arithmetic.

`alpha_bars` is indexed by timestep 0..T with alpha_bars[0] = 1, so t = 0
means "no noise" and q_sample at t = 0 returns x0 exactly.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray  # (T,), betas[i] applies at timestep i+1
    alphas: np.ndarray  # (T,)
    alpha_bars: np.ndarray  # (T+1,), leading 1.0

    @property
    def T(self) -> int:
        return self.betas.shape[0]


def make_linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ValueError("schedule needs at least one step")
    if not 0.0 < beta_start < beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.concatenate([[1.0], np.cumprod(alphas)])
    return NoiseSchedule(betas, alphas, alpha_bars)


def q_sample(x0: np.ndarray, t, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Noise x0 (scaled to [-1,1]) to timestep t: sqrt(ab)*x0 + sqrt(1-ab)*eps."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 {x0.shape} and eps {eps.shape} must match")
    t = np.asarray(t, dtype=np.int64)
    if (t < 0).any() or (t > schedule.T).any():
        raise ValueError("timestep out of range")
    ab = schedule.alpha_bars[t]
    # broadcast per-batch scalars over trailing image dims
    extra = (1,) * (x0.ndim - t.ndim)
    ab = ab.reshape(t.shape + extra)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def ddim_stride_indices(t_from: int, n_steps: int):
    """Uniformly spaced integer timesteps from t_from down to 0, inclusive."""
    if t_from < 1:
        return [0]
    n = min(max(n_steps, 1), t_from)
    ts = np.rint(np.linspace(t_from, 0, n + 1)).astype(np.int64)
    return list(ts)
