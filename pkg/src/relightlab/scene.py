"""Scene description: materials, primitives, cameras, pose sampling.

Scenes are plain data; rendering packs primitives into a flat float array
for the kernel backends (see `_kernels_np` for the column layout).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import envmap
from .errors import DataError

ROUGH_FLOOR = 0.05


def _vec3(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {v.shape}")
    if not np.isfinite(v).all():
        raise ValueError(f"{name} must be finite")
    return v


@dataclass(frozen=True)
class Brdf:
    """Lambertian diffuse plus GGX specular, mixed by specular_weight."""

    albedo: np.ndarray
    roughness: float
    specular_f0: float = 0.04
    specular_weight: float = 0.0

    def __post_init__(self):
        albedo = _vec3(self.albedo, "albedo")
        if (albedo < 0).any() or (albedo > 1).any():
            raise ValueError("albedo must lie in [0,1]")
        if not ROUGH_FLOOR < self.roughness <= 1.0:
            raise ValueError(f"roughness must lie in ({ROUGH_FLOOR}, 1], got {self.roughness}")
        if not 0.0 <= self.specular_f0 <= 1.0:
            raise ValueError("specular_f0 must lie in [0,1]")
        if not 0.0 <= self.specular_weight <= 1.0:
            raise ValueError("specular_weight must lie in [0,1]")
        object.__setattr__(self, "albedo", albedo)
        object.__setattr__(self, "roughness", float(self.roughness))
        object.__setattr__(self, "specular_f0", float(self.specular_f0))
        object.__setattr__(self, "specular_weight", float(self.specular_weight))


SPHERE, PLANE, BOX = 0, 1, 2
_KIND_NAMES = {SPHERE: "sphere", PLANE: "plane", BOX: "box"}
_KIND_CODES = {v: k for k, v in _KIND_NAMES.items()}


@dataclass(frozen=True)
class Primitive:
    kind: int
    params: np.ndarray  # 9 floats, meaning depends on kind
    material: Brdf

    @staticmethod
    def sphere(center, radius: float, material: Brdf) -> "Primitive":
        center = _vec3(center, "center")
        if radius <= 0:
            raise ValueError("sphere radius must be positive")
        params = np.zeros(9)
        params[:3] = center
        params[3] = radius
        return Primitive(SPHERE, params, material)

    @staticmethod
    def plane(point, normal, material: Brdf) -> "Primitive":
        point = _vec3(point, "point")
        normal = _vec3(normal, "normal")
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            raise ValueError("plane normal must be nonzero")
        params = np.zeros(9)
        params[:3] = point
        params[3:6] = normal / norm
        return Primitive(PLANE, params, material)

    @staticmethod
    def box(lo, hi, material: Brdf) -> "Primitive":
        lo = _vec3(lo, "box min")
        hi = _vec3(hi, "box max")
        if not (lo < hi).all():
            raise ValueError("box min must be strictly below max componentwise")
        params = np.zeros(9)
        params[:3] = lo
        params[3:6] = hi
        return Primitive(BOX, params, material)


@dataclass(frozen=True)
class AreaLight:
    """One-rectangle emitter: corner plus two edge vectors, two-sided."""

    corner: np.ndarray
    edge1: np.ndarray
    edge2: np.ndarray
    radiance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "corner", _vec3(self.corner, "corner"))
        object.__setattr__(self, "edge1", _vec3(self.edge1, "edge1"))
        object.__setattr__(self, "edge2", _vec3(self.edge2, "edge2"))
        rad = _vec3(self.radiance, "radiance")
        if (rad < 0).any():
            raise ValueError("light radiance must be nonnegative")
        object.__setattr__(self, "radiance", rad)
        if np.linalg.norm(np.cross(self.edge1, self.edge2)) < 1e-12:
            raise ValueError("area light edges are degenerate")


@dataclass(frozen=True)
class Scene:
    primitives: tuple
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    area_light: AreaLight | None = None

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        bg = _vec3(self.background, "background")
        if (bg < 0).any():
            raise ValueError("background radiance must be nonnegative")
        object.__setattr__(self, "background", bg)


def pack_prims(scene: Scene) -> np.ndarray:
    """Flatten primitives to the (P, 16) kernel layout."""
    out = np.zeros((len(scene.primitives), 16))
    for i, prim in enumerate(scene.primitives):
        m = prim.material
        out[i, 0] = prim.kind
        out[i, 1:10] = prim.params
        out[i, 10:13] = m.albedo
        out[i, 13] = m.roughness
        out[i, 14] = m.specular_f0
        out[i, 15] = m.specular_weight
    return out


# ---------------------------------------------------------------------------
# Cameras


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: `rotation` maps camera coordinates to world.

    Camera space is right-handed with +X right, +Y up, looking down -Z.
    """

    rotation: np.ndarray
    position: np.ndarray
    vfov: float = 45.0
    res: tuple = (64, 64)

    def __post_init__(self):
        object.__setattr__(self, "rotation", envmap.validate_rotation(self.rotation))
        object.__setattr__(self, "position", _vec3(self.position, "position"))
        if not 10.0 <= self.vfov <= 120.0:
            raise ValueError(f"vfov must lie in [10, 120] degrees, got {self.vfov}")
        h, w = self.res
        if h < 1 or w < 1:
            raise ValueError("camera resolution must be positive")
        object.__setattr__(self, "vfov", float(self.vfov))
        object.__setattr__(self, "res", (int(h), int(w)))


def look_at(position, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """Camera-to-world rotation looking from position toward target."""
    position = _vec3(position, "position")
    target = _vec3(target, "target")
    up = _vec3(up, "up")
    fwd = target - position
    norm = np.linalg.norm(fwd)
    if norm < 1e-12:
        raise ValueError("camera position coincides with target")
    fwd = fwd / norm
    if abs(fwd @ up) > 0.999 * np.linalg.norm(up):
        up = np.array([0.0, 0.0, 1.0]) if abs(fwd[1]) > 0.999 else np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    true_up = np.cross(right, fwd)
    return np.stack([right, true_up, -fwd], axis=1)


def camera_rays(camera: Camera):
    """Primary ray origins and unit directions, flattened row-major (H*W, 3)."""
    h, w = camera.res
    tanv = np.tan(np.deg2rad(camera.vfov) / 2.0)
    aspect = w / h
    xs = (np.arange(w) + 0.5) / w * 2.0 - 1.0
    ys = 1.0 - (np.arange(h) + 0.5) / h * 2.0
    xx, yy = np.meshgrid(xs * tanv * aspect, ys * tanv)
    dirs_cam = np.stack([xx, yy, -np.ones_like(xx)], axis=-1).reshape(-1, 3)
    dirs = dirs_cam @ camera.rotation.T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(camera.position, dirs.shape).copy()
    return origins, dirs


def sample_poses(n: int, radius: float, seed: int, vfov: float = 45.0, res=(64, 64)):
    """n look-at-origin cameras, positions uniform on the upper hemisphere."""
    if n < 1:
        raise ValueError("need at least one pose")
    rng = np.random.default_rng(seed)
    cams = []
    for _ in range(n):
        y = rng.uniform(0.0, 1.0)
        phi = rng.uniform(0.0, 2.0 * np.pi)
        ring = np.sqrt(max(1.0 - y * y, 0.0))
        pos = radius * np.array([ring * np.cos(phi), y, ring * np.sin(phi)])
        cams.append(Camera(look_at(pos), pos, vfov=vfov, res=res))
    return cams


# ---------------------------------------------------------------------------
# Scene files


def scene_to_dict(scene: Scene) -> dict:
    prims = []
    for p in scene.primitives:
        m = p.material
        entry = {
            "shape": _KIND_NAMES[p.kind],
            "material": {
                "albedo": list(m.albedo),
                "roughness": m.roughness,
                "specular_f0": m.specular_f0,
                "specular_weight": m.specular_weight,
            },
        }
        if p.kind == SPHERE:
            entry["center"] = list(p.params[:3])
            entry["radius"] = p.params[3]
        elif p.kind == PLANE:
            entry["point"] = list(p.params[:3])
            entry["normal"] = list(p.params[3:6])
        else:
            entry["min"] = list(p.params[:3])
            entry["max"] = list(p.params[3:6])
        prims.append(entry)
    out = {"primitives": prims, "background": list(scene.background)}
    if scene.area_light is not None:
        L = scene.area_light
        out["area_light"] = {
            "corner": list(L.corner),
            "edge1": list(L.edge1),
            "edge2": list(L.edge2),
            "radiance": list(L.radiance),
        }
    return out


def scene_from_dict(data: dict) -> Scene:
    try:
        prims = []
        for entry in data["primitives"]:
            mat = entry["material"]
            brdf = Brdf(
                np.asarray(mat["albedo"], np.float64),
                float(mat["roughness"]),
                float(mat.get("specular_f0", 0.04)),
                float(mat.get("specular_weight", 0.0)),
            )
            shape = entry["shape"]
            if shape == "sphere":
                prims.append(Primitive.sphere(entry["center"], float(entry["radius"]), brdf))
            elif shape == "plane":
                prims.append(Primitive.plane(entry["point"], entry["normal"], brdf))
            elif shape == "box":
                prims.append(Primitive.box(entry["min"], entry["max"], brdf))
            else:
                raise DataError(f"unknown primitive shape {shape!r}")
        light = None
        if "area_light" in data:
            L = data["area_light"]
            light = AreaLight(L["corner"], L["edge1"], L["edge2"], L["radiance"])
        return Scene(tuple(prims), np.asarray(data.get("background", (0, 0, 0)), np.float64), light)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed scene definition: {exc}") from exc


def save_scene(path, scene: Scene) -> None:
    with open(path, "w") as fh:
        json.dump(scene_to_dict(scene), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_scene(path) -> Scene:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read scene file {path}: {exc}") from exc
    return scene_from_dict(data)
