"""Equirectangular HDR environment maps.

Pinned convention: up axis is +Y, v is the polar coordinate (v=0 at +Y),
u is azimuth with u=0.5 facing +X and the seam (u=0) at -X. Texel (r, c)
owns the uv cell centred at ((c+0.5)/W, (r+0.5)/H). Maps wrap in u and
clamp in v.
"""

from dataclasses import dataclass

import numpy as np

ROT_TOL = 1e-6


def _check_pixels(pixels):
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) pixels, got {pixels.shape}")
    if not np.isfinite(pixels).all():
        raise ValueError("pixels must be finite")
    return pixels


@dataclass(frozen=True)
class EnvMap:
    """Linear-radiance panorama, unbounded nonnegative values, W = 2H."""

    pixels: np.ndarray

    def __post_init__(self):
        pixels = _check_pixels(self.pixels)
        if (pixels < 0).any():
            raise ValueError("radiance must be nonnegative")
        if pixels.shape[1] != 2 * pixels.shape[0]:
            raise ValueError(f"equirect maps need W = 2H, got {pixels.shape[:2]}")
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class LdrEnvMap:
    """Tone-mapped display-range panorama, values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        pixels = _check_pixels(self.pixels)
        if (pixels < 0).any() or (pixels > 1).any():
            raise ValueError("LDR values must lie in [0, 1]")
        object.__setattr__(self, "pixels", pixels)


@dataclass(frozen=True)
class NormHdrEnvMap:
    """Log-compressed panorama normalized to [0, 1].

    `scale_reference` keeps the pre-normalization maximum of log1p(radiance)
    so the absolute energy of the source map stays recoverable.
    """

    pixels: np.ndarray
    scale_reference: float

    def __post_init__(self):
        pixels = _check_pixels(self.pixels)
        if (pixels < 0).any() or (pixels > 1).any():
            raise ValueError("normalized values must lie in [0, 1]")
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "scale_reference", float(self.scale_reference))


def validate_rotation(matrix) -> np.ndarray:
    """Check a 3x3 matrix is orthonormal with det +1, within 1e-6."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {matrix.shape}")
    if not np.allclose(matrix.T @ matrix, np.eye(3), atol=ROT_TOL):
        raise ValueError("rotation is not orthonormal")
    if abs(np.linalg.det(matrix) - 1.0) > ROT_TOL:
        raise ValueError("rotation must have determinant +1")
    return matrix


def yaw_matrix(degrees: float) -> np.ndarray:
    """Rotation about +Y by `degrees`."""
    a = np.deg2rad(degrees)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def pitch_matrix(degrees: float) -> np.ndarray:
    """Rotation about +X by `degrees`."""
    a = np.deg2rad(degrees)
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def roll_matrix(degrees: float) -> np.ndarray:
    """Rotation about +Z by `degrees`."""
    a = np.deg2rad(degrees)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_rotation(yaw: float = 0.0, pitch: float = 0.0, roll: float = 0.0) -> np.ndarray:
    """Compose yaw (about +Y), then pitch (+X), then roll (+Z), in degrees."""
    return roll_matrix(roll) @ pitch_matrix(pitch) @ yaw_matrix(yaw)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation via normalized quaternion."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def dir_from_uv(u, v):
    """Map uv to a unit direction: theta = pi*v from +Y, phi = 2*pi*(u-0.5) from +X.

    Accepts scalars or arrays (broadcast); returns (..., 3).
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    theta = np.pi * v
    phi = 2.0 * np.pi * (u - 0.5)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), np.cos(theta), st * np.sin(phi)], axis=-1)


def uv_from_dir(d):
    """Invert dir_from_uv; poles map to u = 0.5. Input must be unit length."""
    d = np.asarray(d, dtype=np.float64)
    norm = np.linalg.norm(d, axis=-1)
    if not np.allclose(norm, 1.0, atol=1e-6):
        raise ValueError("direction must be unit length")
    y = np.clip(d[..., 1], -1.0, 1.0)
    v = np.arccos(y) / np.pi
    phi = np.arctan2(d[..., 2], d[..., 0])
    u = np.mod(phi / (2.0 * np.pi) + 0.5, 1.0)
    at_pole = np.abs(y) >= 1.0 - 1e-12
    u = np.where(at_pole, 0.5, u)
    return u, v


def _wrap_cols(c, width):
    return np.mod(c, width)


def sample(envmap: EnvMap, u, v, mode: str = "bilinear"):
    """Sample the map at uv; bilinear wraps in u and clamps in v."""
    pixels = envmap.pixels
    h, w = pixels.shape[:2]
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if mode == "nearest":
        c = _wrap_cols(np.floor(u * w).astype(np.int64), w)
        r = np.clip(np.floor(v * h).astype(np.int64), 0, h - 1)
        return pixels[r, c]
    if mode != "bilinear":
        raise ValueError(f"unknown sample mode {mode!r}")
    x = u * w - 0.5
    y = v * h - 0.5
    c0 = np.floor(x).astype(np.int64)
    r0 = np.floor(y).astype(np.int64)
    fx = (x - c0)[..., None]
    fy = (y - r0)[..., None]
    c1 = _wrap_cols(c0 + 1, w)
    c0 = _wrap_cols(c0, w)
    r1 = np.clip(r0 + 1, 0, h - 1)
    r0 = np.clip(r0, 0, h - 1)
    top = pixels[r0, c0] * (1 - fx) + pixels[r0, c1] * fx
    bot = pixels[r1, c0] * (1 - fx) + pixels[r1, c1] * fx
    return top * (1 - fy) + bot * fy


def texel_centers(height: int, width: int):
    """uv grids of texel centres, each shaped (height, width)."""
    u = (np.arange(width) + 0.5) / width
    v = (np.arange(height) + 0.5) / height
    return np.meshgrid(u, v)


def texel_directions(height: int, width: int) -> np.ndarray:
    """Unit direction of every texel centre, shaped (height, width, 3)."""
    uu, vv = texel_centers(height, width)
    return dir_from_uv(uu, vv)


def rotate_envmap(envmap: EnvMap, rotation, mode: str = "bilinear") -> EnvMap:
    """Resample so output texel at direction d reads the input at rotation @ d.

    With `rotation` the camera-to-world matrix, the result expresses the map
    in the camera frame: each output texel is a fixed direction relative to
    the camera.
    """
    rotation = validate_rotation(rotation)
    dirs = texel_directions(envmap.height, envmap.width)
    rotated = dirs @ rotation.T
    rotated /= np.linalg.norm(rotated, axis=-1, keepdims=True)
    u, v = uv_from_dir(rotated)
    return EnvMap(sample(envmap, u, v, mode=mode))


def tonemap_ldr(envmap: EnvMap) -> LdrEnvMap:
    """Global Reinhard x/(1+x) followed by gamma 1/2.2, clamped to [0, 1]."""
    x = envmap.pixels
    out = np.clip((x / (1.0 + x)) ** (1.0 / 2.2), 0.0, 1.0)
    return LdrEnvMap(out)


def lognorm_hdr(envmap: EnvMap) -> NormHdrEnvMap:
    """log1p then divide by the global maximum; all-zero maps stay zero."""
    y = np.log1p(envmap.pixels)
    peak = float(y.max())
    if peak <= 0.0:
        return NormHdrEnvMap(np.zeros_like(y), 0.0)
    return NormHdrEnvMap(np.clip(y / peak, 0.0, 1.0), peak)


def solid_angles(height: int, width: int) -> np.ndarray:
    """Per-texel solid angle, constant along rows: (2pi/W)(pi/H) sin(theta_row)."""
    if height < 1 or width < 1:
        raise ValueError("map dimensions must be positive")
    theta = (np.arange(height) + 0.5) * np.pi / height
    row = (2.0 * np.pi / width) * (np.pi / height) * np.sin(theta)
    return np.repeat(row[:, None], width, axis=1)


def _area_weights(n_src: int, n_dst: int) -> np.ndarray:
    """Row-stochastic matrix averaging source cells into destination cells."""
    w = np.zeros((n_dst, n_src))
    scale = n_src / n_dst
    for i in range(n_dst):
        lo, hi = i * scale, (i + 1) * scale
        j0, j1 = int(np.floor(lo)), int(min(np.ceil(hi), n_src))
        for j in range(j0, j1):
            w[i, j] = min(hi, j + 1) - max(lo, j)
    return w / scale


def _bilinear_weights(n_src: int, n_dst: int) -> np.ndarray:
    """Hat-kernel interpolation matrix over cell centres, clamped at the ends."""
    w = np.zeros((n_dst, n_src))
    for i in range(n_dst):
        x = (i + 0.5) * n_src / n_dst - 0.5
        j0 = int(np.floor(x))
        f = x - j0
        a = min(max(j0, 0), n_src - 1)
        b = min(max(j0 + 1, 0), n_src - 1)
        w[i, a] += 1.0 - f
        w[i, b] += f
    return w


def resize(pixels: np.ndarray, new_height: int, new_width: int, mode: str = "area") -> np.ndarray:
    """Resize an (H, W[, C]) image; 'area' averages exactly, 'bilinear' interpolates.

    Operates on raw pixel arrays because conditioning maps are resized to a
    square model resolution, which drops the 2:1 panorama aspect.
    """
    if new_height < 1 or new_width < 1:
        raise ValueError("target dimensions must be positive")
    pixels = np.asarray(pixels, dtype=np.float64)
    squeeze = pixels.ndim == 2
    if squeeze:
        pixels = pixels[..., None]
    h, w = pixels.shape[:2]
    if mode == "area":
        wh, ww = _area_weights(h, new_height), _area_weights(w, new_width)
    elif mode == "bilinear":
        wh, ww = _bilinear_weights(h, new_height), _bilinear_weights(w, new_width)
    else:
        raise ValueError(f"unknown resize mode {mode!r}")
    out = np.einsum("ih,hwc,jw->ijc", wh, pixels, ww, optimize=True)
    return out[..., 0] if squeeze else out


def conditioning_maps(envmap: EnvMap, rotation, res: int, mode: str = "bilinear"):
    """Rotate into the camera frame and split into (LdrEnvMap, NormHdrEnvMap) at res x res."""
    aligned = rotate_envmap(envmap, rotation, mode=mode)
    ldr = resize(tonemap_ldr(aligned).pixels, res, res, mode="bilinear")
    hdr = lognorm_hdr(aligned)
    hdr_px = resize(hdr.pixels, res, res, mode="bilinear")
    return np.clip(ldr, 0.0, 1.0), np.clip(hdr_px, 0.0, 1.0), hdr.scale_reference
