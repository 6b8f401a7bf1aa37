"""Voxel radiance field and the two-stage relighting pipeline.

A field is a density grid plus an RGB appearance grid over an axis-aligned
box. Stage 1 relights the input views with the 2D diffusion relighter and
refits the appearance grid against them (density frozen). Stage 2 polishes
the appearance by repeatedly rendering one view, perturb-denoising that
render at an annealed noise level, and descending an L1 + pyramid-L1 loss
toward the denoised image, which is treated as a constant. An SDS-style
update is included purely as the comparison baseline.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import scene as sc
from .backend import get_kernels
from .diffusion.relight2d import ddim_sample, make_conditioning, perturb_denoise
from .diffusion.schedule import NoiseSchedule, q_sample
from .diffusion.train import pack_conditioning
from .errors import DataError, NumericError
from .render import ImageF


@dataclass
class VoxelField:
    """density >= 0, appearance in [0,1]; both grids share a cubic resolution.

    Grids are float32 (the checkpoint precision); ray math stays float64.
    """

    bbox_min: np.ndarray
    bbox_max: np.ndarray
    density: np.ndarray  # (D, D, D) float32
    appearance: np.ndarray  # (D, D, D, 3) float32

    def __post_init__(self):
        self.bbox_min = np.asarray(self.bbox_min, np.float64)
        self.bbox_max = np.asarray(self.bbox_max, np.float64)
        self.density = np.ascontiguousarray(self.density, np.float32)
        self.appearance = np.ascontiguousarray(self.appearance, np.float32)
        self.validate()

    def validate(self):
        if self.bbox_min.shape != (3,) or self.bbox_max.shape != (3,):
            raise ValueError("bbox corners must be 3-vectors")
        if not np.all(self.bbox_max > self.bbox_min):
            raise ValueError("bbox_max must exceed bbox_min on every axis")
        ext = self.bbox_max - self.bbox_min
        if np.ptp(ext) > 1e-9 * ext[0]:
            raise ValueError("bbox must be a cube (voxels are cubic)")
        d = self.density.shape
        if len(d) != 3 or len(set(d)) != 1:
            raise ValueError(f"density grid must be cubic, got {d}")
        if self.appearance.shape != d + (3,):
            raise ValueError("appearance grid must be density shape + (3,)")
        if not np.isfinite(self.density).all() or self.density.min() < 0:
            raise ValueError("density must be finite and nonnegative")
        if not np.isfinite(self.appearance).all():
            raise ValueError("appearance must be finite")
        if self.appearance.min() < 0 or self.appearance.max() > 1:
            raise ValueError("appearance must lie in [0,1]")

    @property
    def grid_res(self) -> int:
        return self.density.shape[0]

    @property
    def voxel_size(self) -> float:
        return float((self.bbox_max[0] - self.bbox_min[0]) / self.grid_res)

    def copy(self) -> "VoxelField":
        return VoxelField(
            self.bbox_min.copy(), self.bbox_max.copy(),
            self.density.copy(), self.appearance.copy(),
        )


def make_field(grid_res: int, bbox_min=(-1.05, -1.05, -1.05), bbox_max=(1.05, 1.05, 1.05)) -> VoxelField:
    d = np.zeros((grid_res,) * 3, np.float32)
    a = np.full((grid_res,) * 3 + (3,), 0.5, np.float32)
    return VoxelField(np.asarray(bbox_min, float), np.asarray(bbox_max, float), d, a)


def _upsample3(grid, new_res: int):
    """Cell-centered trilinear resample along each axis in turn."""
    out = np.asarray(grid, np.float32)
    for ax in range(3):
        n = out.shape[ax]
        pos = (np.arange(new_res) + 0.5) / new_res * n - 0.5
        i0 = np.clip(np.floor(pos).astype(np.int64), 0, n - 1)
        i1 = np.clip(i0 + 1, 0, n - 1)
        f = np.clip(pos - i0, 0.0, 1.0).astype(np.float32)
        lo = np.take(out, i0, axis=ax)
        hi = np.take(out, i1, axis=ax)
        shape = [1] * out.ndim
        shape[ax] = new_res
        f = f.reshape(shape)
        out = lo * (1.0 - f) + hi * f
    return out


# ---------------------------------------------------------------------------
# Rendering


def render_rays(field: VoxelField, origins, dirs, n_samples: int = 128, bg=1.0):
    bgv = np.full(3, bg, np.float64) if np.isscalar(bg) else np.asarray(bg, np.float64)
    k = get_kernels()
    return k.volume_render(
        field.density, field.appearance, field.bbox_min, field.voxel_size,
        np.ascontiguousarray(origins, np.float64),
        np.ascontiguousarray(dirs, np.float64), n_samples, bgv,
    )


def render_rays_grad(field: VoxelField, origins, dirs, d_rgb, d_alpha, n_samples: int = 128, bg=1.0):
    bgv = np.full(3, bg, np.float64) if np.isscalar(bg) else np.asarray(bg, np.float64)
    k = get_kernels()
    return k.volume_render_grad(
        field.density, field.appearance, field.bbox_min, field.voxel_size,
        np.ascontiguousarray(origins, np.float64),
        np.ascontiguousarray(dirs, np.float64), n_samples, bgv,
        np.ascontiguousarray(d_rgb, np.float64),
        np.ascontiguousarray(d_alpha, np.float64),
    )


def field_render(field: VoxelField, camera: sc.Camera, n_samples: int = 128, bg=1.0) -> ImageF:
    """Deterministic midpoint-sample volume render, composited over bg."""
    h, w = camera.res
    ro, rd = sc.camera_rays(camera)
    rgb, alpha = render_rays(field, ro, rd, n_samples, bg)
    return ImageF(rgb.reshape(h, w, 3), alpha.reshape(h, w))


# ---------------------------------------------------------------------------
# Fitting


class GridAdam:
    """Adam per grid with projection back onto the valid set after each step."""

    def __init__(self, shape, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = np.zeros(shape, np.float32)
        self.v = np.zeros(shape, np.float32)

    def step(self, value, grad):
        self.t += 1
        self.m *= self.beta1
        self.m += (1 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1 - self.beta2) * grad * grad
        mh = self.m / (1 - self.beta1 ** self.t)
        vh = self.v / (1 - self.beta2 ** self.t)
        value -= self.lr * mh / (np.sqrt(vh) + self.eps)


def tv_penalty(grid, weight: float):
    """Mean squared neighbor difference over the three grid axes.

    Returns (loss, grad). Suppresses the free-space mist a 16-view fit
    otherwise grows at high grid resolution.
    """
    loss = 0.0
    grad = np.zeros_like(grid)
    for ax in range(3):
        d = np.diff(grid, axis=ax)
        loss += float((d.astype(np.float64) ** 2).mean()) * weight
        scale = np.float32(2.0 * weight / d.size)
        hi = [slice(None)] * grid.ndim
        lo = [slice(None)] * grid.ndim
        hi[ax] = slice(1, None)
        lo[ax] = slice(0, -1)
        grad[tuple(hi)] += scale * d
        grad[tuple(lo)] -= scale * d
    return loss, grad


@dataclass
class FieldFitConfig:
    grid_res: int = 96
    iters: int = 2000
    batch_rays: int = 4096
    n_samples: int = 128
    lr_density: float = 0.3
    lr_appearance: float = 0.05
    alpha_weight: float = 0.25
    tv_density: float = 1e-4
    tv_appearance: float = 1e-2
    coarse_res: int = 32
    coarse_frac: float = 0.3
    bg: float = 1.0
    seed: int = 0
    bbox_min: tuple = (-1.05, -1.05, -1.05)
    bbox_max: tuple = (1.05, 1.05, 1.05)


def _flatten_views(images, cameras, alphas=None):
    ro_all, rd_all, tgt = [], [], []
    a_all = [] if alphas is not None else None
    for i, cam in enumerate(cameras):
        ro, rd = sc.camera_rays(cam)
        ro_all.append(ro)
        rd_all.append(rd)
        tgt.append(np.asarray(images[i], np.float64).reshape(-1, 3))
        if alphas is not None:
            a_all.append(np.asarray(alphas[i], np.float64).reshape(-1))
    out_a = np.concatenate(a_all) if alphas is not None else None
    return np.concatenate(ro_all), np.concatenate(rd_all), np.concatenate(tgt), out_a


def _check_loss(value):
    if not np.isfinite(value):
        raise NumericError(f"field optimization diverged: loss {value!r}")
    return float(value)


def _fit_phase(field, ro, rd, tgt, a_tgt, cfg, iters, rng, losses):
    opt_d = GridAdam(field.density.shape, cfg.lr_density)
    opt_a = GridAdam(field.appearance.shape, cfg.lr_appearance)
    n = ro.shape[0]
    for _ in range(iters):
        idx = rng.integers(0, n, size=min(cfg.batch_rays, n))
        rgb, alpha = render_rays(field, ro[idx], rd[idx], cfg.n_samples, cfg.bg)
        diff = rgb - tgt[idx]
        loss = (diff ** 2).mean()
        d_rgb = (2.0 / diff.size) * diff
        if a_tgt is not None:
            da = alpha - a_tgt[idx]
            loss = loss + cfg.alpha_weight * (da ** 2).mean()
            d_alpha = cfg.alpha_weight * (2.0 / da.size) * da
        else:
            d_alpha = np.zeros(idx.size)
        _, _, g_d, g_a = render_rays_grad(
            field, ro[idx], rd[idx], d_rgb, d_alpha, cfg.n_samples, cfg.bg
        )
        if cfg.tv_density > 0:
            tv_l, tv_g = tv_penalty(field.density, cfg.tv_density)
            loss += tv_l
            g_d = g_d + tv_g
        if cfg.tv_appearance > 0:
            tv_l, tv_g = tv_penalty(field.appearance, cfg.tv_appearance)
            loss += tv_l
            g_a = g_a + tv_g
        losses.append(_check_loss(loss))
        opt_d.step(field.density, g_d)
        opt_a.step(field.appearance, g_a)
        np.maximum(field.density, 0.0, out=field.density)
        np.clip(field.appearance, 0.0, 1.0, out=field.appearance)


def fit_field(images, cameras, cfg: FieldFitConfig, alphas=None, heldout=None):
    """Joint density+appearance fit to posed display-space views.

    images: (N,H,W,3) in [0,1]; alphas optionally supervise ray opacity,
    which resolves the white-object-vs-empty-space ambiguity on white
    backgrounds. Fits a coarse grid first, then upsamples and continues at
    full resolution. Returns (field, info) with the loss history and, when
    a (images, cameras) pair is passed as heldout, the held-out PSNR.
    """
    if len(cameras) < 8:
        raise DataError(f"need at least 8 posed views, got {len(cameras)}")
    if len(images) != len(cameras):
        raise DataError("images and cameras disagree in length")
    ro, rd, tgt, a_tgt = _flatten_views(images, cameras, alphas)
    rng = np.random.default_rng(cfg.seed)
    losses: list = []
    coarse_iters = 0
    if 0 < cfg.coarse_res < cfg.grid_res and cfg.coarse_frac > 0:
        coarse_iters = int(cfg.iters * cfg.coarse_frac)
    if coarse_iters:
        field = make_field(cfg.coarse_res, cfg.bbox_min, cfg.bbox_max)
        _fit_phase(field, ro, rd, tgt, a_tgt, cfg, coarse_iters, rng, losses)
        field = VoxelField(
            field.bbox_min, field.bbox_max,
            np.maximum(_upsample3(field.density, cfg.grid_res), 0.0),
            np.clip(_upsample3(field.appearance, cfg.grid_res), 0.0, 1.0),
        )
    else:
        field = make_field(cfg.grid_res, cfg.bbox_min, cfg.bbox_max)
    _fit_phase(field, ro, rd, tgt, a_tgt, cfg, cfg.iters - coarse_iters, rng, losses)
    info = {"losses": losses}
    if heldout is not None:
        h_img, h_cam = heldout
        errs = []
        for i, cam in enumerate(h_cam):
            img = field_render(field, cam, cfg.n_samples, cfg.bg)
            errs.append(((img.rgb - np.asarray(h_img[i], np.float64)) ** 2).mean())
        info["heldout_psnr"] = float(-10.0 * np.log10(max(np.mean(errs), 1e-12)))
    return field, info


# ---------------------------------------------------------------------------
# Stage 1: relight the input views, refit appearance


def view_conditioning(images, cameras, env, ablate: str = "none"):
    """Conditioning block per view: the view itself plus its camera-frame
    target-env maps."""
    images = np.asarray(images, np.float32)
    res = images.shape[1]
    ldr = np.empty_like(images)
    hdr = np.empty_like(images)
    for i, cam in enumerate(cameras):
        el, eh = make_conditioning(env, cam.rotation, res, ablate)
        ldr[i] = el
        hdr[i] = eh
    return pack_conditioning(images, ldr, hdr)


def relight_views(denoiser, schedule, images, cameras, env, n_steps=25, seed=0, ablate="none"):
    """Diffusion-relight each input view under env; seeds are per-view."""
    cond = view_conditioning(images, cameras, env, ablate)
    out = np.empty_like(np.asarray(images, np.float32))
    for i in range(cond.shape[0]):
        out[i] = ddim_sample(
            denoiser, schedule, cond[i : i + 1], n_steps=n_steps, seed=seed + i
        )[0]
    return out


def _check_trained(denoiser):
    head = [p for p in denoiser.params() if p.name == "head.conv.w"]
    if head and not head[0].value.any():
        raise DataError("denoiser head weights are all zero; train it first")


@dataclass
class Stage1Config:
    iters: int = 2500
    batch_rays: int = 4096
    n_samples: int = 128
    lr_appearance: float = 0.05
    bg: float = 1.0
    seed: int = 0
    relight_steps: int = 25


def stage1_relight(
    field: VoxelField, images, cameras, env, denoiser, schedule: NoiseSchedule,
    cfg: Stage1Config = Stage1Config(),
):
    """Refit appearance against diffusion-relit input views; density frozen.

    Returns (new field, info) where info carries the relit views and the
    reconstruction loss history.
    """
    _check_trained(denoiser)
    relit = relight_views(
        denoiser, schedule, images, cameras, env,
        n_steps=cfg.relight_steps, seed=cfg.seed + 9000,
    )
    out = field.copy()
    frozen = field.density.copy()
    ro, rd, tgt, _ = _flatten_views(relit, cameras)
    rng = np.random.default_rng(cfg.seed)
    opt_a = GridAdam(out.appearance.shape, cfg.lr_appearance)
    losses = []
    n = ro.shape[0]
    for _ in range(cfg.iters):
        idx = rng.integers(0, n, size=min(cfg.batch_rays, n))
        rgb, _alpha = render_rays(out, ro[idx], rd[idx], cfg.n_samples, cfg.bg)
        diff = rgb - tgt[idx]
        losses.append(_check_loss((diff ** 2).mean()))
        d_rgb = (2.0 / diff.size) * diff
        _, _, _g_d, g_a = render_rays_grad(
            out, ro[idx], rd[idx], d_rgb, np.zeros(idx.size), cfg.n_samples, cfg.bg
        )
        opt_a.step(out.appearance, g_a)
        np.clip(out.appearance, 0.0, 1.0, out=out.appearance)
    out.density[...] = frozen  # freeze contract: bit-identical
    return out, {"losses": losses, "relit_views": relit}


# ---------------------------------------------------------------------------
# Stage 2: annealed perturb-denoise refinement


@dataclass
class Stage2Config:
    iterations: int = 500
    t_start: float = 0.4
    t_end: float = 0.05
    w1: float = 0.5
    w2: float = 0.5
    ddim_steps: int = 10
    n_samples: int = 128
    lr_appearance: float = 0.02
    bg: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.t_end < self.t_start <= 1.0):
            raise ValueError("need 0 < t_end < t_start <= 1")
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("loss weights must be nonnegative")


def t_star(i: int, cfg: Stage2Config) -> float:
    """Exponential anneal from t_start at i=0 down to t_end at i=N."""
    if not 0 <= i <= cfg.iterations:
        raise ValueError(f"iteration {i} outside [0, {cfg.iterations}]")
    frac = i / cfg.iterations
    return float(cfg.t_start * (cfg.t_end / cfg.t_start) ** frac)


def _down2(img):
    h, w, c = img.shape
    return img.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))


def pyramid_l1(pred, target, levels: int = 3):
    """Mean L1 over successively halved copies, starting at half resolution.

    Returns (loss, grad wrt pred at full resolution). Linear downsampling
    makes the gradient an equal redistribution back up the pyramid.
    """
    loss = 0.0
    grad = np.zeros_like(pred)
    cur_p, cur_t = pred, target
    for lv in range(1, levels + 1):
        cur_p = _down2(cur_p)
        cur_t = _down2(cur_t)
        diff = cur_p - cur_t
        loss += np.abs(diff).mean() / levels
        g = np.sign(diff) / (diff.size * levels)
        up = g / 4.0 ** lv
        for _ in range(lv):
            up = np.repeat(np.repeat(up, 2, axis=0), 2, axis=1)
        grad += up
    return loss, grad


def l1_loss(pred, target):
    diff = pred - target
    return float(np.abs(diff).mean()), np.sign(diff) / diff.size


def stage2_refine(
    field: VoxelField, images, cameras, env, denoiser, schedule: NoiseSchedule,
    cfg: Stage2Config = Stage2Config(),
):
    """Annealed perturb-denoise polishing of the appearance grid.

    Per iteration: render one input pose, perturb-denoise that render at
    t*(i) conditioned on the matching input view, and take the denoised
    image as a constant target for w1*L1 + w2*pyramid-L1.
    Returns (new field, info with per-iteration losses and t* values).
    """
    _check_trained(denoiser)
    out = field.copy()
    frozen = field.density.copy()
    cond = view_conditioning(images, cameras, env)
    rays = [sc.camera_rays(cam) for cam in cameras]
    res = np.asarray(images).shape[1]
    rng = np.random.default_rng(cfg.seed)
    opt_a = GridAdam(out.appearance.shape, cfg.lr_appearance)
    losses, t_values = [], []
    for i in range(cfg.iterations):
        view = int(rng.integers(0, len(cameras)))
        ro, rd = rays[view]
        rgb, _ = render_rays(out, ro, rd, cfg.n_samples, cfg.bg)
        # weights + residual transmittance sum to 1, so with appearance and
        # bg in [0,1] the render already lies in [0,1]; no clipping needed
        render = rgb.reshape(res, res, 3)
        ts = t_star(i, cfg)
        t_values.append(ts)
        target = perturb_denoise(
            denoiser, schedule, render[None], cond[view : view + 1], ts,
            n_steps=cfg.ddim_steps, seed=cfg.seed + 31 * i,
        )[0].astype(np.float64)
        l1, g1 = l1_loss(render, target)
        lp, gp = pyramid_l1(render, target)
        losses.append(_check_loss(cfg.w1 * l1 + cfg.w2 * lp))
        g_img = cfg.w1 * g1 + cfg.w2 * gp
        _, _, _g_d, g_a = render_rays_grad(
            out, ro, rd, g_img.reshape(-1, 3), np.zeros(ro.shape[0]),
            cfg.n_samples, cfg.bg,
        )
        opt_a.step(out.appearance, g_a)
        np.clip(out.appearance, 0.0, 1.0, out=out.appearance)
    out.density[...] = frozen
    return out, {"losses": losses, "t_star": t_values}


# ---------------------------------------------------------------------------
# SDS baseline


def sds_step(
    field: VoxelField, camera: sc.Camera, cond_row, denoiser,
    schedule: NoiseSchedule, t_index: int, eps, weight: float = 1.0,
    n_samples: int = 128, bg: float = 1.0,
):
    """One score-distillation gradient for the appearance grid.

    Renders the view, noises it to t_index, and pushes
    weight * (eps_hat - eps) back through the renderer alone.
    Returns (g_appearance, render rgb).
    """
    ro, rd = sc.camera_rays(camera)
    res = camera.res[0]
    rgb, _ = render_rays(field, ro, rd, n_samples, bg)
    render = rgb.reshape(res, res, 3)
    x0 = render.astype(np.float32) * 2.0 - 1.0
    t_arr = np.array([t_index])
    x_t = q_sample(x0[None], t_arr, eps[None].astype(np.float32), schedule)
    net_in = np.concatenate([x_t, cond_row[None]], axis=-1)
    eps_hat = denoiser.forward(net_in, t_arr)[0]
    g_img = weight * (eps_hat.astype(np.float64) - eps) * 2.0  # display->model range
    _, _, _g_d, g_a = render_rays_grad(
        field, ro, rd, g_img.reshape(-1, 3), np.zeros(ro.shape[0]), n_samples, bg
    )
    return g_a, render


def sds_refine(
    field: VoxelField, images, cameras, env, denoiser, schedule: NoiseSchedule,
    iterations: int = 500, t_min: float = 0.05, t_max: float = 0.4,
    lr_appearance: float = 0.02, weight: float = 1.0, n_samples: int = 128,
    bg: float = 1.0, seed: int = 0,
):
    """The rejected baseline: SDS updates of the appearance grid only."""
    _check_trained(denoiser)
    out = field.copy()
    frozen = field.density.copy()
    cond = view_conditioning(images, cameras, env)
    res = np.asarray(images).shape[1]
    rng = np.random.default_rng(seed)
    opt_a = GridAdam(out.appearance.shape, lr_appearance)
    for _ in range(iterations):
        view = int(rng.integers(0, len(cameras)))
        ts = rng.uniform(t_min, t_max)
        t_index = max(1, int(np.rint(ts * schedule.T)))
        eps = rng.standard_normal((res, res, 3))
        g_a, _render = sds_step(
            out, cameras[view], cond[view], denoiser, schedule, t_index, eps,
            weight=weight, n_samples=n_samples, bg=bg,
        )
        if not np.isfinite(g_a).all():
            raise NumericError("SDS gradient is not finite")
        opt_a.step(out.appearance, g_a)
        np.clip(out.appearance, 0.0, 1.0, out=out.appearance)
    out.density[...] = frozen
    return out


def saturation_fraction(images, mask=None, tol: float = 1.0 / 255.0) -> float:
    """Fraction of (masked) pixel values within tol of 0 or 1."""
    arr = np.asarray(images, np.float64)
    sat = (arr <= tol) | (arr >= 1.0 - tol)
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, bool)[..., None], arr.shape)
        if not m.any():
            raise DataError("saturation mask selects no pixels")
        return float(sat[m].mean())
    return float(sat.mean())


# ---------------------------------------------------------------------------
# Checkpoints


def save_field(path: str, field: VoxelField, extra: dict | None = None):
    meta = {
        "bbox_min": [float(v) for v in field.bbox_min],
        "bbox_max": [float(v) for v in field.bbox_max],
        "grid_res": field.grid_res,
        "extra": extra or {},
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    np.savez(
        path,
        meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), np.uint8),
        density=field.density.astype("<f4"),
        appearance=field.appearance.astype("<f4"),
    )


def load_field(path: str) -> VoxelField:
    try:
        blob = np.load(path)
    except OSError as exc:
        raise DataError(f"cannot read field checkpoint {path}: {exc}") from exc
    if "meta" not in blob or "density" not in blob:
        raise DataError(f"{path} is not a field checkpoint")
    meta = json.loads(bytes(blob["meta"]).decode())
    return VoxelField(
        np.array(meta["bbox_min"]), np.array(meta["bbox_max"]),
        blob["density"].astype(np.float64), blob["appearance"].astype(np.float64),
    )
