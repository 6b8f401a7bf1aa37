"""Synthetic paired relighting data with exact transport ground truth.

Every pose gets one transport tensor; each target image is a contraction
of that tensor with a world-frame environment, so ground truth is exact
to float precision and generation stays fast. Stored target envs are
pre-rotated into the camera frame (the model's conditioning frame); the
world-frame source env and yaw index are recorded so ablations can feed
unrotated maps.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import envmap as em
from . import hdrio, render
from . import scene as sc
from .errors import DataError

ENV_RES = (16, 32)


# ---------------------------------------------------------------------------
# Procedural environment library


def _unit(v):
    return v / np.linalg.norm(v)


def make_env(rng: np.random.Generator, env_res=ENV_RES) -> em.EnvMap:
    """One random environment: 1-4 directional lobes over a dim smooth fill."""
    h, w = env_res
    dirs = em.texel_directions(h, w)
    px = np.zeros((h, w, 3))
    for _ in range(rng.integers(1, 5)):
        mu = _unit(rng.standard_normal(3))
        kappa = np.exp(rng.uniform(np.log(5.0), np.log(200.0)))
        # wide intensity spread so paired relights differ strongly in display space
        strength = np.exp(rng.uniform(np.log(0.15), np.log(8.0)))
        tint = 0.25 + 0.75 * rng.random(3)
        tint /= tint.max()
        peak = strength * kappa / (2.0 * np.pi)
        px += peak * np.exp(kappa * (dirs @ mu - 1.0))[:, :, None] * tint
    # low-frequency ambient fill
    coarse = rng.random((4, 8, 3)) * rng.uniform(0.02, 0.3)
    px += em.resize(coarse, h, w, mode="bilinear")
    return em.EnvMap(px)


def make_env_library(n: int, seed: int, env_res=ENV_RES):
    rng = np.random.default_rng(seed)
    return [make_env(rng, env_res) for _ in range(n)]


def yaw_roll(env: em.EnvMap, k: int) -> em.EnvMap:
    """Exact yaw by k texel columns (equals rotate_envmap with a texel yaw)."""
    return em.EnvMap(np.roll(env.pixels, k % env.width, axis=1))


# ---------------------------------------------------------------------------
# Procedural object scenes


def random_brdf(rng: np.random.Generator) -> sc.Brdf:
    return sc.Brdf(
        albedo=0.1 + 0.85 * rng.random(3),
        roughness=rng.uniform(0.1, 0.95),
        specular_f0=rng.uniform(0.02, 0.3),
        specular_weight=rng.uniform(0.0, 0.8),
    )


def random_scene(rng: np.random.Generator, with_light: bool = True) -> sc.Scene:
    """A small cluster of primitives near the origin; no ground plane, so the
    alpha channel separates object from background cleanly."""
    prims = []
    n_parts = int(rng.integers(2, 5))
    for _ in range(n_parts):
        offset = rng.uniform(-0.35, 0.35, 3)
        if rng.random() < 0.7:
            prims.append(
                sc.Primitive.sphere(offset, rng.uniform(0.4, 0.65), random_brdf(rng))
            )
        else:
            half = rng.uniform(0.25, 0.55, 3)
            prims.append(sc.Primitive.box(offset - half, offset + half, random_brdf(rng)))
    light = None
    if with_light:
        center = _unit(np.array([rng.normal(), abs(rng.normal()) + 0.5, rng.normal()])) * rng.uniform(1.4, 2.2)
        e1 = _unit(rng.standard_normal(3)) * rng.uniform(0.3, 1.0)
        e2_dir = _unit(np.cross(e1, rng.standard_normal(3)))
        e2 = e2_dir * rng.uniform(0.3, 1.0)
        light = sc.AreaLight(center - 0.5 * (e1 + e2), e1, e2, rng.uniform(5.0, 40.0, 3))
    return sc.Scene(tuple(prims), np.zeros(3), light)


# ---------------------------------------------------------------------------
# Generation


@dataclass(frozen=True)
class DatasetConfig:
    out_dir: str
    n_scenes: int = 64
    n_poses: int = 4
    n_envs_per_pose: int = 8
    n_envs: int = 24
    img_res: int = 64
    env_res: tuple = ENV_RES
    seed: int = 0
    camera_radius: float = 2.0
    vfov: float = 45.0

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["env_res"] = list(self.env_res)
        return d


def _save_target_env(pose_dir, j, rotated: em.EnvMap):
    hdrio.save_envmap(os.path.join(pose_dir, f"env_{j}.hdr"), rotated)
    hdrio.write_png(
        os.path.join(pose_dir, f"env_{j}_ldr.png"), em.tonemap_ldr(rotated).pixels
    )
    nh = em.lognorm_hdr(rotated)
    with open(os.path.join(pose_dir, f"env_{j}_hdr.pfm"), "wb") as fh:
        fh.write(hdrio.write_pfm(nh.pixels.astype(np.float32)))
    return nh.scale_reference


def _write_pfm_file(path, arr):
    with open(path, "wb") as fh:
        fh.write(hdrio.write_pfm(np.asarray(arr, np.float32)))


def generate_dataset(cfg: DatasetConfig) -> str:
    """Render the paired dataset; returns the manifest path."""
    if cfg.n_scenes < 1 or cfg.n_poses < 1 or cfg.n_envs_per_pose < 1:
        raise DataError("dataset counts must be positive")
    if cfg.n_envs < cfg.n_envs_per_pose + 1:
        raise DataError("env library too small for the per-pose draw")
    os.makedirs(cfg.out_dir, exist_ok=True)
    env_dir = os.path.join(cfg.out_dir, "envs")
    os.makedirs(env_dir, exist_ok=True)
    library = make_env_library(cfg.n_envs, seed=cfg.seed + 1000, env_res=cfg.env_res)
    env_paths = []
    for k, env in enumerate(library):
        rel = f"envs/env_{k}.hdr"
        hdrio.save_envmap(os.path.join(cfg.out_dir, rel), env)
        env_paths.append(rel)
    # RGBE storage quantizes; reload so manifest GT matches files exactly
    library = [hdrio.load_envmap(os.path.join(cfg.out_dir, p)) for p in env_paths]

    records = []
    n_images = 0
    for s in range(cfg.n_scenes):
        scene_id = f"s{s:03d}"
        rng = np.random.default_rng((cfg.seed, s))
        scene = random_scene(rng)
        scene_dir = os.path.join(cfg.out_dir, "scenes", scene_id)
        os.makedirs(scene_dir, exist_ok=True)
        sc.save_scene(os.path.join(scene_dir, "scene.json"), scene)
        poses = sc.sample_poses(
            cfg.n_poses, cfg.camera_radius, seed=int(rng.integers(1 << 31)),
            vfov=cfg.vfov, res=(cfg.img_res, cfg.img_res),
        )
        for p, cam in enumerate(poses):
            pose_dir = os.path.join(scene_dir, f"pose_{p}")
            os.makedirs(pose_dir, exist_ok=True)
            transport = render.build_transport(scene, cam, cfg.env_res)
            draw = rng.choice(cfg.n_envs, size=cfg.n_envs_per_pose + 1, replace=False)
            yaws = rng.integers(0, cfg.env_res[1], size=cfg.n_envs_per_pose + 1)
            input_env = yaw_roll(library[draw[0]], int(yaws[0]))
            input_img = render.relight_transport(transport, input_env)
            hdrio.write_png(
                os.path.join(pose_dir, "input.png"), render.display_image(input_img)
            )
            _write_pfm_file(os.path.join(pose_dir, "input.pfm"), input_img.rgb)
            _write_pfm_file(os.path.join(pose_dir, "alpha.pfm"), np.repeat(input_img.alpha[:, :, None], 3, axis=2))
            hdrio.save_envmap(
                os.path.join(pose_dir, "input_env.hdr"),
                em.rotate_envmap(input_env, cam.rotation),
            )
            if scene.area_light is not None:
                area_img = render.render_area_light(scene, cam)
                _write_pfm_file(os.path.join(pose_dir, "area.pfm"), area_img.rgb)
                n_images += 1
            cam_info = {
                "position": [float(v) for v in cam.position],
                "vfov": cam.vfov,
                "res": [cam.res[0], cam.res[1]],
            }
            rot = [float(v) for v in cam.rotation.reshape(-1)]
            for j in range(cfg.n_envs_per_pose):
                world = yaw_roll(library[draw[j + 1]], int(yaws[j + 1]))
                gt = render.relight_transport(transport, world)
                _write_pfm_file(os.path.join(pose_dir, f"gt_{j}.pfm"), gt.rgb)
                rotated = em.rotate_envmap(world, cam.rotation)
                scale_ref = _save_target_env(pose_dir, j, rotated)
                rel_pose = f"scenes/{scene_id}/pose_{p}"
                records.append(
                    {
                        "type": "sample",
                        "pair_id": f"{scene_id}_p{p}_e{j}",
                        "scene": scene_id,
                        "pose": p,
                        "target": j,
                        "scene_file": f"scenes/{scene_id}/scene.json",
                        "input_image": f"{rel_pose}/input.png",
                        "input_linear": f"{rel_pose}/input.pfm",
                        "input_env": f"{rel_pose}/input_env.hdr",
                        "alpha": f"{rel_pose}/alpha.pfm",
                        "target_image": f"{rel_pose}/gt_{j}.pfm",
                        "target_env": f"{rel_pose}/env_{j}.hdr",
                        "target_env_ldr": f"{rel_pose}/env_{j}_ldr.png",
                        "target_env_hdr": f"{rel_pose}/env_{j}_hdr.pfm",
                        "target_env_world": env_paths[draw[j + 1]],
                        "target_env_yaw": int(yaws[j + 1]),
                        "hdr_scale_reference": scale_ref,
                        "rotation": rot,
                        "camera": cam_info,
                        "area_image": f"{rel_pose}/area.pfm" if scene.area_light else None,
                    }
                )
                n_images += 1
            n_images += 1  # the input render
    config_rec = {
        "type": "config",
        "counts": {"samples": len(records), "images": n_images},
        **cfg.to_dict(),
    }
    manifest = os.path.join(cfg.out_dir, "manifest.jsonl")
    with open(manifest, "w") as fh:
        fh.write(json.dumps(config_rec, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest


def generate_directional_testset(
    out_dir: str,
    n_views: int = 16,
    n_yaws: int = 8,
    img_res: int = 32,
    env_res=ENV_RES,
    seed: int = 77,
) -> str:
    """Pairs built from yaw-rotated copies of one strongly directional env.

    Input images use a flat ambient env, so the target lighting direction is
    only recoverable from the conditioning maps; feeding unrotated maps makes
    the direction ambiguous across cameras.
    """
    os.makedirs(out_dir, exist_ok=True)
    env_dir = os.path.join(out_dir, "envs")
    os.makedirs(env_dir, exist_ok=True)
    h, w = env_res
    dirs = em.texel_directions(h, w)
    mu = _unit(np.array([1.0, 0.35, 0.0]))
    kappa = 80.0
    base = 6.0 * kappa / (2.0 * np.pi) * np.exp(kappa * (dirs @ mu - 1.0))
    base_px = base[:, :, None] * np.array([1.0, 0.93, 0.82]) + 0.05
    base_env = em.EnvMap(base_px)
    hdrio.save_envmap(os.path.join(out_dir, "envs/env_0.hdr"), base_env)
    base_env = hdrio.load_envmap(os.path.join(out_dir, "envs/env_0.hdr"))
    ambient = em.EnvMap(np.full((h, w, 3), 0.3))
    hdrio.save_envmap(os.path.join(out_dir, "envs/ambient.hdr"), ambient)

    rng = np.random.default_rng(seed)
    scene = random_scene(rng, with_light=False)
    scene_dir = os.path.join(out_dir, "scenes", "s000")
    os.makedirs(scene_dir, exist_ok=True)
    sc.save_scene(os.path.join(scene_dir, "scene.json"), scene)
    poses = sc.sample_poses(n_views, 2.0, seed=seed + 1, res=(img_res, img_res))
    records = []
    for p, cam in enumerate(poses):
        pose_dir = os.path.join(scene_dir, f"pose_{p}")
        os.makedirs(pose_dir, exist_ok=True)
        transport = render.build_transport(scene, cam, env_res)
        input_img = render.relight_transport(transport, ambient)
        hdrio.write_png(os.path.join(pose_dir, "input.png"), render.display_image(input_img))
        _write_pfm_file(os.path.join(pose_dir, "input.pfm"), input_img.rgb)
        _write_pfm_file(os.path.join(pose_dir, "alpha.pfm"), np.repeat(input_img.alpha[:, :, None], 3, axis=2))
        hdrio.save_envmap(
            os.path.join(pose_dir, "input_env.hdr"), em.rotate_envmap(ambient, cam.rotation)
        )
        yaw_choices = rng.choice(w, size=n_yaws, replace=False)
        cam_info = {
            "position": [float(v) for v in cam.position],
            "vfov": cam.vfov,
            "res": [cam.res[0], cam.res[1]],
        }
        rot = [float(v) for v in cam.rotation.reshape(-1)]
        for j, yaw_k in enumerate(int(k) for k in yaw_choices):
            world = yaw_roll(base_env, yaw_k)
            gt = render.relight_transport(transport, world)
            _write_pfm_file(os.path.join(pose_dir, f"gt_{j}.pfm"), gt.rgb)
            rotated = em.rotate_envmap(world, cam.rotation)
            scale_ref = _save_target_env(pose_dir, j, rotated)
            rel_pose = f"scenes/s000/pose_{p}"
            records.append(
                {
                    "type": "sample",
                    "pair_id": f"s000_p{p}_e{j}",
                    "scene": "s000",
                    "pose": p,
                    "target": j,
                    "scene_file": "scenes/s000/scene.json",
                    "input_image": f"{rel_pose}/input.png",
                    "input_linear": f"{rel_pose}/input.pfm",
                    "input_env": f"{rel_pose}/input_env.hdr",
                    "alpha": f"{rel_pose}/alpha.pfm",
                    "target_image": f"{rel_pose}/gt_{j}.pfm",
                    "target_env": f"{rel_pose}/env_{j}.hdr",
                    "target_env_ldr": f"{rel_pose}/env_{j}_ldr.png",
                    "target_env_hdr": f"{rel_pose}/env_{j}_hdr.pfm",
                    "target_env_world": "envs/env_0.hdr",
                    "target_env_yaw": yaw_k,
                    "hdr_scale_reference": scale_ref,
                    "rotation": rot,
                    "camera": cam_info,
                    "area_image": None,
                }
            )
    config_rec = {
        "type": "config",
        "directional": True,
        "counts": {"samples": len(records)},
        "img_res": img_res,
        "env_res": list(env_res),
        "seed": seed,
    }
    manifest = os.path.join(out_dir, "manifest.jsonl")
    with open(manifest, "w") as fh:
        fh.write(json.dumps(config_rec, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest


def generate_field_scene(
    out_dir: str,
    n_views: int = 16,
    n_test: int = 4,
    img_res: int = 32,
    env_res=ENV_RES,
    seed: int = 5,
    camera_radius: float = 2.0,
) -> str:
    """Multi-view captures of one scene for radiance-field relighting.

    Writes n_views training views plus n_test held-out ones, all lit by a
    single input env, and transport-oracle ground truth under a separate
    target env for every view. No area light: the env must explain every
    pixel so the oracle GT is complete.
    """
    if n_views < 8:
        raise DataError("field fitting needs at least 8 views")
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng((seed, 99))
    scene = random_scene(rng, with_light=False)
    sc.save_scene(os.path.join(out_dir, "scene.json"), scene)
    input_env = make_env(rng, env_res)
    target_env = yaw_roll(make_env(rng, env_res), int(rng.integers(1, env_res[1])))
    hdrio.save_envmap(os.path.join(out_dir, "input_env.hdr"), input_env)
    hdrio.save_envmap(os.path.join(out_dir, "target_env.hdr"), target_env)
    # reload: the RGBE files are what consumers see, match them exactly
    input_env = hdrio.load_envmap(os.path.join(out_dir, "input_env.hdr"))
    target_env = hdrio.load_envmap(os.path.join(out_dir, "target_env.hdr"))

    total = n_views + n_test
    poses = sc.sample_poses(total, camera_radius, seed=seed + 1, res=(img_res, img_res))
    views = []
    for i, cam in enumerate(poses):
        transport = render.build_transport(scene, cam, env_res)
        inp = render.relight_transport(transport, input_env)
        gt = render.relight_transport(transport, target_env)
        _write_pfm_file(os.path.join(out_dir, f"view_{i:02d}.pfm"),
                        render.display_image(inp))
        _write_pfm_file(os.path.join(out_dir, f"alpha_{i:02d}.pfm"),
                        np.repeat(inp.alpha[:, :, None], 3, axis=2))
        _write_pfm_file(os.path.join(out_dir, f"gt_{i:02d}.pfm"),
                        render.display_image(gt))
        views.append(
            {
                "index": i,
                "split": "train" if i < n_views else "test",
                "image": f"view_{i:02d}.pfm",
                "alpha": f"alpha_{i:02d}.pfm",
                "target_gt": f"gt_{i:02d}.pfm",
                "position": [float(v) for v in cam.position],
                "rotation": [float(v) for v in cam.rotation.reshape(-1)],
                "vfov": cam.vfov,
                "res": [cam.res[0], cam.res[1]],
            }
        )
    meta = {
        "type": "field_scene",
        "n_views": n_views,
        "n_test": n_test,
        "img_res": img_res,
        "env_res": list(env_res),
        "seed": seed,
        "scene_file": "scene.json",
        "input_env": "input_env.hdr",
        "target_env": "target_env.hdr",
        "views": views,
    }
    path = os.path.join(out_dir, "views.json")
    with open(path, "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
    return path


def load_field_scene(path: str) -> dict:
    """Load a generate_field_scene directory back into arrays.

    Returns a dict with train/test images, alphas, target GT, Camera lists,
    and the two EnvMaps. Display-space float32 throughout.
    """
    try:
        with open(path) as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read field scene {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not a field-scene manifest: {exc}") from exc
    if meta.get("type") != "field_scene":
        raise DataError(f"{path} is not a field-scene manifest")
    root = os.path.dirname(os.path.abspath(path))
    out = {
        "input_env": hdrio.load_envmap(os.path.join(root, meta["input_env"])),
        "target_env": hdrio.load_envmap(os.path.join(root, meta["target_env"])),
        "img_res": int(meta["img_res"]),
        "meta": meta,
    }
    for split in ("train", "test"):
        rows = [v for v in meta["views"] if v["split"] == split]
        images = np.stack([_read_pfm_file(os.path.join(root, v["image"])) for v in rows])
        alphas = np.stack(
            [_read_pfm_file(os.path.join(root, v["alpha"]))[:, :, 0] for v in rows]
        )
        gts = np.stack([_read_pfm_file(os.path.join(root, v["target_gt"])) for v in rows])
        cams = [
            sc.Camera(
                position=np.array(v["position"]),
                rotation=np.array(v["rotation"]).reshape(3, 3),
                vfov=float(v["vfov"]),
                res=(int(v["res"][0]), int(v["res"][1])),
            )
            for v in rows
        ]
        out[split] = {
            "images": images.astype(np.float32),
            "alphas": alphas.astype(np.float32),
            "target_gt": gts.astype(np.float32),
            "cameras": cams,
        }
    return out


# ---------------------------------------------------------------------------
# Loading


def load_manifest(path: str, check_files: bool = False):
    """Returns (config record, sample records)."""
    try:
        with open(path) as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if not lines:
        raise DataError(f"manifest {path} is empty")
    try:
        head = json.loads(lines[0])
        records = [json.loads(ln) for ln in lines[1:]]
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not line-delimited JSON: {exc}") from exc
    if head.get("type") != "config":
        raise DataError("manifest must start with a config record")
    samples = [r for r in records if r.get("type") == "sample"]
    if check_files:
        root = os.path.dirname(os.path.abspath(path))
        for rec in samples:
            for key in ("input_image", "target_image", "target_env", "alpha"):
                rel = rec.get(key)
                if rel and not os.path.exists(os.path.join(root, rel)):
                    raise DataError(f"manifest references missing file {rel}")
    return head, samples


@dataclass
class PairSet:
    """In-memory training pairs, all display-space float32 at one resolution."""

    inputs: np.ndarray  # (N, R, R, 3) white-composited input images
    targets: np.ndarray  # (N, R, R, 3) white-composited target images
    ldr: np.ndarray  # (N, R, R, 3) conditioning E_L
    hdr: np.ndarray  # (N, R, R, 3) conditioning E_H
    alpha: np.ndarray  # (N, R, R) foreground masks
    pair_ids: list
    scene_ids: list

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx)
        return PairSet(
            self.inputs[idx], self.targets[idx], self.ldr[idx], self.hdr[idx],
            self.alpha[idx],
            [self.pair_ids[i] for i in idx], [self.scene_ids[i] for i in idx],
        )


def _read_pfm_file(path):
    with open(path, "rb") as fh:
        return hdrio.read_pfm(fh.read())


def _display_target(gt_rgb, alpha):
    lin = gt_rgb * alpha[:, :, None] + (1.0 - alpha[:, :, None])
    return render.linear_to_srgb(lin)


def load_pairs(
    manifest_path: str,
    res: int,
    ablate: str = "none",
    scenes=None,
    limit=None,
) -> PairSet:
    """Materialize (input, conditioning, target) arrays from a manifest.

    ablate: none | no-ldr | no-hdr | no-rotation. The no-rotation variant
    recomputes conditioning from the world-frame env (yaw applied, camera
    alignment skipped); channel-zeroing variants blank one conditioning map.
    """
    if ablate not in ("none", "no-ldr", "no-hdr", "no-rotation"):
        raise DataError(f"unknown ablation {ablate!r}")
    root = os.path.dirname(os.path.abspath(manifest_path))
    _, samples = load_manifest(manifest_path)
    if scenes is not None:
        keep = set(scenes)
        samples = [r for r in samples if r["scene"] in keep]
    if limit is not None:
        samples = samples[:limit]
    if not samples:
        raise DataError("no samples selected from manifest")
    n = len(samples)
    inputs = np.empty((n, res, res, 3), np.float32)
    targets = np.empty((n, res, res, 3), np.float32)
    ldr = np.empty((n, res, res, 3), np.float32)
    hdr = np.empty((n, res, res, 3), np.float32)
    alpha_out = np.empty((n, res, res), np.float32)
    world_cache: dict = {}
    for i, rec in enumerate(samples):
        inp = hdrio.read_png(os.path.join(root, rec["input_image"]))
        gt = _read_pfm_file(os.path.join(root, rec["target_image"]))
        a = _read_pfm_file(os.path.join(root, rec["alpha"]))[:, :, 0]
        if inp.shape[0] != res:
            inp = em.resize(inp, res, res, mode="area")
            gt = em.resize(gt.astype(np.float64), res, res, mode="area")
            a = em.resize(a.astype(np.float64), res, res, mode="area")
        inputs[i] = inp
        targets[i] = _display_target(np.asarray(gt, np.float64), np.asarray(a, np.float64))
        alpha_out[i] = a
        if ablate == "no-rotation":
            key = (rec["target_env_world"], rec["target_env_yaw"])
            if key not in world_cache:
                world = hdrio.load_envmap(os.path.join(root, rec["target_env_world"]))
                world = yaw_roll(world, rec["target_env_yaw"])
                el = em.resize(em.tonemap_ldr(world).pixels, res, res, mode="bilinear")
                el = np.rint(np.clip(el, 0, 1) * 255.0) / 255.0  # match stored 8-bit LDR
                eh = em.resize(em.lognorm_hdr(world).pixels, res, res, mode="bilinear")
                world_cache[key] = (el, np.clip(eh, 0.0, 1.0))
            ldr[i], hdr[i] = world_cache[key]
        else:
            el = hdrio.read_png(os.path.join(root, rec["target_env_ldr"]))
            eh = _read_pfm_file(os.path.join(root, rec["target_env_hdr"])).astype(np.float64)
            ldr[i] = np.clip(em.resize(el, res, res, mode="bilinear"), 0.0, 1.0)
            hdr[i] = np.clip(em.resize(eh, res, res, mode="bilinear"), 0.0, 1.0)
    if ablate == "no-ldr":
        ldr[...] = 0.0
    elif ablate == "no-hdr":
        hdr[...] = 0.0
    return PairSet(
        inputs, targets, ldr, hdr, alpha_out,
        [r["pair_id"] for r in samples], [r["scene"] for r in samples],
    )
