"""Deterministic direct-lighting renderer and the transport-matrix oracle.

Shading integrates the environment over every texel with solid-angle
quadrature weights; nothing is sampled stochastically, so renders are
bit-reproducible and exactly linear in the environment radiance. That
linearity is what makes the transport tensor an exact relighting oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import envmap as em
from .backend import get_kernels
from .scene import Camera, Scene, camera_rays, pack_prims


@dataclass(frozen=True)
class ImageF:
    """Linear-radiance image with a hit-mask alpha channel."""

    rgb: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        rgb = np.asarray(self.rgb, np.float64)
        alpha = np.asarray(self.alpha, np.float64)
        if rgb.ndim != 3 or rgb.shape[2] != 3 or alpha.shape != rgb.shape[:2]:
            raise ValueError(f"bad image shapes {rgb.shape} / {alpha.shape}")
        if (rgb < 0).any() or not np.isfinite(rgb).all():
            raise ValueError("radiance must be finite and nonnegative")
        if (alpha < 0).any() or (alpha > 1).any():
            raise ValueError("alpha must lie in [0,1]")
        object.__setattr__(self, "rgb", rgb)
        object.__setattr__(self, "alpha", alpha)


@dataclass(frozen=True)
class Hit:
    t: float
    point: np.ndarray
    normal: np.ndarray
    prim_index: int


@dataclass(frozen=True)
class TransportTensor:
    """entries[p, j, c]: pixel p's radiance under a one-hot env at texel j."""

    entries: np.ndarray  # (npixels, ntexels, 3) float32
    env_res: tuple  # (H', W')
    image_res: tuple  # (H, W)
    alpha: np.ndarray  # (npixels,) hit mask

    def __post_init__(self):
        npix, ntex, _ = self.entries.shape
        if npix != self.image_res[0] * self.image_res[1]:
            raise ValueError("entry rows do not match image resolution")
        if ntex != self.env_res[0] * self.env_res[1]:
            raise ValueError("entry columns do not match env resolution")


def intersect(scene: Scene, origin, direction):
    """Nearest hit of one ray, or None. Direction must be unit length."""
    ro = np.asarray(origin, np.float64).reshape(1, 3)
    rd = np.asarray(direction, np.float64).reshape(1, 3)
    if abs(np.linalg.norm(rd) - 1.0) > 1e-6:
        raise ValueError("ray direction must be unit length")
    k = get_kernels()
    t, idx, normal = k.intersect(pack_prims(scene), ro, rd)
    if idx[0] < 0:
        return None
    return Hit(float(t[0]), (ro + t[0] * rd)[0], normal[0], int(idx[0]))


def _env_tables(env: em.EnvMap):
    h, w = env.height, env.width
    dirs = em.texel_directions(h, w).reshape(-1, 3)
    omega = em.solid_angles(h, w).reshape(-1)
    px = env.pixels.reshape(-1, 3)
    return dirs, omega, px


def shade_direct(scene: Scene, hit: Hit, view_dir, env: em.EnvMap) -> np.ndarray:
    """Outgoing radiance at a hit toward the viewer (view_dir points at the eye)."""
    k = get_kernels()
    dirs, omega, px = _env_tables(env)
    wo = np.asarray(view_dir, np.float64).reshape(1, 3)
    out = k.shade(
        pack_prims(scene),
        hit.point.reshape(1, 3),
        hit.normal.reshape(1, 3),
        wo,
        np.array([hit.prim_index], np.int64),
        px,
        dirs,
        omega,
    )
    return out[0]


def render_image(scene: Scene, camera: Camera, env: em.EnvMap) -> ImageF:
    """Primary-ray render under environment lighting; miss pixels show background."""
    k = get_kernels()
    prims = pack_prims(scene)
    ro, rd = camera_rays(camera)
    t, idx, normals = k.intersect(prims, ro, rd)
    hit = idx >= 0
    h, w = camera.res
    rgb = np.broadcast_to(scene.background, (h * w, 3)).copy()
    if hit.any():
        pts = ro[hit] + t[hit][:, None] * rd[hit]
        dirs, omega, px = _env_tables(env)
        rgb[hit] = k.shade(prims, pts, normals[hit], -rd[hit], idx[hit], px, dirs, omega)
    return ImageF(rgb.reshape(h, w, 3), hit.astype(np.float64).reshape(h, w))


def render_area_light(scene: Scene, camera: Camera, nsub: int = 8) -> ImageF:
    """Direct lighting from the scene's rectangular emitter only."""
    if scene.area_light is None:
        raise ValueError("scene has no area light")
    k = get_kernels()
    prims = pack_prims(scene)
    ro, rd = camera_rays(camera)
    t, idx, normals = k.intersect(prims, ro, rd)
    hit = idx >= 0
    h, w = camera.res
    rgb = np.broadcast_to(scene.background, (h * w, 3)).copy()
    if hit.any():
        pts = ro[hit] + t[hit][:, None] * rd[hit]
        L = scene.area_light
        rgb[hit] = k.shade_area(
            prims, pts, normals[hit], -rd[hit], idx[hit],
            L.corner, L.edge1, L.edge2, L.radiance, nsub,
        )
    return ImageF(rgb.reshape(h, w, 3), hit.astype(np.float64).reshape(h, w))


def build_transport(scene: Scene, camera: Camera, env_dims: tuple) -> TransportTensor:
    """Per-pixel response to every env texel, extracted in one shading pass."""
    eh, ew = env_dims
    k = get_kernels()
    prims = pack_prims(scene)
    ro, rd = camera_rays(camera)
    t, idx, normals = k.intersect(prims, ro, rd)
    hit = idx >= 0
    h, w = camera.res
    entries = np.zeros((h * w, eh * ew, 3), np.float32)
    if hit.any():
        pts = ro[hit] + t[hit][:, None] * rd[hit]
        dirs = em.texel_directions(eh, ew).reshape(-1, 3)
        omega = em.solid_angles(eh, ew).reshape(-1)
        entries[hit] = k.transport_rows(prims, pts, normals[hit], -rd[hit], idx[hit], dirs, omega)
    return TransportTensor(entries, (eh, ew), (h, w), hit.astype(np.float64))


def relight_transport(transport: TransportTensor, env: em.EnvMap) -> ImageF:
    """Exact relighting: contract the transport tensor with an env map."""
    if (env.height, env.width) != transport.env_res:
        raise ValueError(
            f"env resolution {(env.height, env.width)} does not match transport {transport.env_res}"
        )
    flat = env.pixels.reshape(-1, 3)
    # contraction in float64; entries stay float32 in memory
    rgb = np.einsum("ptc,tc->pc", transport.entries, flat, dtype=np.float64)
    h, w = transport.image_res
    return ImageF(np.maximum(rgb, 0.0).reshape(h, w, 3), transport.alpha.reshape(h, w))


# ---------------------------------------------------------------------------
# Display transform


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1.0 / 2.4) - 0.055)


def srgb_to_linear(y: np.ndarray) -> np.ndarray:
    y = np.clip(y, 0.0, 1.0)
    return np.where(y <= 0.04045, y / 12.92, np.power((y + 0.055) / 1.055, 2.4))


def display_image(image: ImageF, white_background: bool = True) -> np.ndarray:
    """Clip to [0,1], sRGB-encode, optionally compositing misses over white."""
    rgb = image.rgb
    if white_background:
        a = image.alpha[..., None]
        rgb = rgb * a + (1.0 - a)
    return linear_to_srgb(rgb)
