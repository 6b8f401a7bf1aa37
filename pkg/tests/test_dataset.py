"""Dataset generation and loading: determinism, manifests, pair materialization."""

import json
import os

import numpy as np
import pytest

from relightlab import dataset as ds
from relightlab import envmap as em
from relightlab import hdrio, render
from relightlab import scene as sc
from relightlab.errors import DataError


def small_cfg(out_dir, **kw):
    base = dict(
        out_dir=str(out_dir), n_scenes=2, n_poses=1, n_envs_per_pose=2,
        n_envs=4, img_res=16, seed=3,
    )
    base.update(kw)
    return ds.DatasetConfig(**base)


@pytest.fixture(scope="module")
def gen_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    manifest = ds.generate_dataset(small_cfg(out))
    return out, manifest


@pytest.fixture(scope="module")
def field_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("field")
    path = ds.generate_field_scene(str(out), n_views=8, n_test=2, img_res=16, seed=5)
    return out, path


# -- environment library ------------------------------------------------------


def test_make_env_shape_and_positivity():
    rng = np.random.default_rng(0)
    env = ds.make_env(rng)
    assert env.pixels.shape == (*ds.ENV_RES, 3)
    assert (env.pixels > 0).all() and np.isfinite(env.pixels).all()


def test_make_env_library_deterministic():
    a = ds.make_env_library(3, seed=9)
    b = ds.make_env_library(3, seed=9)
    for ea, eb in zip(a, b):
        assert np.array_equal(ea.pixels, eb.pixels)
    c = ds.make_env_library(3, seed=10)
    assert not np.array_equal(a[0].pixels, c[0].pixels)


def test_yaw_roll_matches_numpy_roll_and_wraps():
    env = ds.make_env(np.random.default_rng(1))
    w = env.width
    k = 5
    assert np.array_equal(ds.yaw_roll(env, k).pixels, np.roll(env.pixels, k, axis=1))
    assert np.array_equal(ds.yaw_roll(env, w).pixels, env.pixels)
    assert np.array_equal(ds.yaw_roll(env, k + w).pixels, ds.yaw_roll(env, k).pixels)


def test_random_scene_composition():
    rng = np.random.default_rng(2)
    scene = ds.random_scene(rng)
    assert 2 <= len(scene.primitives) <= 4
    assert scene.area_light is not None
    no_light = ds.random_scene(rng, with_light=False)
    assert no_light.area_light is None


# -- generation ---------------------------------------------------------------


def test_generate_dataset_layout(gen_dir):
    out, manifest = gen_dir
    head, samples = ds.load_manifest(manifest, check_files=True)
    assert head["type"] == "config"
    assert head["counts"]["samples"] == len(samples) == 2 * 1 * 2
    assert head["img_res"] == 16 and head["env_res"] == [16, 32]
    keys = {
        "pair_id", "scene", "pose", "target", "input_image", "input_linear",
        "input_env", "alpha", "target_image", "target_env", "target_env_ldr",
        "target_env_hdr", "target_env_world", "target_env_yaw",
        "hdr_scale_reference", "rotation", "camera",
    }
    for rec in samples:
        assert keys <= set(rec)
        assert len(rec["rotation"]) == 9
    ids = [r["pair_id"] for r in samples]
    assert len(set(ids)) == len(ids)


def test_generate_dataset_deterministic(tmp_path):
    m1 = ds.generate_dataset(small_cfg(tmp_path / "a"))
    m2 = ds.generate_dataset(small_cfg(tmp_path / "b"))
    l1, l2 = open(m1).read().splitlines(), open(m2).read().splitlines()
    h1, h2 = json.loads(l1[0]), json.loads(l2[0])
    h1.pop("out_dir"), h2.pop("out_dir")  # the only path-dependent field
    assert h1 == h2
    assert l1[1:] == l2[1:]
    _, samples = ds.load_manifest(m1)
    rec = samples[0]
    for key in ("input_image", "target_image", "target_env"):
        b1 = open(os.path.join(tmp_path / "a", rec[key]), "rb").read()
        b2 = open(os.path.join(tmp_path / "b", rec[key]), "rb").read()
        assert b1 == b2


def test_generate_dataset_validation(tmp_path):
    with pytest.raises(DataError):
        ds.generate_dataset(small_cfg(tmp_path, n_envs=2))  # needs n_envs_per_pose+1
    with pytest.raises(DataError):
        ds.generate_dataset(small_cfg(tmp_path, n_scenes=0))


def test_stored_gt_matches_transport_oracle(gen_dir):
    """gt_*.pfm must be the exact transport contraction of the stored assets."""
    out, manifest = gen_dir
    _, samples = ds.load_manifest(manifest)
    rec = samples[-1]
    scene = sc.load_scene(os.path.join(out, rec["scene_file"]))
    cam = sc.Camera(
        position=np.array(rec["camera"]["position"]),
        rotation=np.array(rec["rotation"]).reshape(3, 3),
        vfov=rec["camera"]["vfov"],
        res=tuple(rec["camera"]["res"]),
    )
    world = hdrio.load_envmap(os.path.join(out, rec["target_env_world"]))
    world = ds.yaw_roll(world, rec["target_env_yaw"])
    transport = render.build_transport(scene, cam, (world.height, world.width))
    relit = render.relight_transport(transport, world)
    stored = hdrio.read_pfm(open(os.path.join(out, rec["target_image"]), "rb").read())
    assert np.array_equal(stored, relit.rgb.astype(np.float32))


def test_stored_env_is_camera_rotated_world(gen_dir):
    out, manifest = gen_dir
    _, samples = ds.load_manifest(manifest)
    rec = samples[0]
    world = hdrio.load_envmap(os.path.join(out, rec["target_env_world"]))
    world = ds.yaw_roll(world, rec["target_env_yaw"])
    rot = em.rotate_envmap(world, np.array(rec["rotation"]).reshape(3, 3))
    stored = hdrio.load_envmap(os.path.join(out, rec["target_env"]))
    # stored file passed once through the shared-exponent codec
    err = np.abs(stored.pixels - rot.pixels) / np.maximum(rot.pixels.max(axis=2, keepdims=True), 1e-9)
    assert err.max() <= 1.0 / 256.0 + 1e-9


def test_load_manifest_errors(tmp_path):
    p = tmp_path / "m.jsonl"
    with pytest.raises(DataError):
        ds.load_manifest(str(tmp_path / "missing.jsonl"))
    p.write_text("")
    with pytest.raises(DataError):
        ds.load_manifest(str(p))
    p.write_text('{"type": "sample"}\n')
    with pytest.raises(DataError):
        ds.load_manifest(str(p))
    p.write_text("not json\n")
    with pytest.raises(DataError):
        ds.load_manifest(str(p))


def test_load_manifest_check_files_catches_missing(gen_dir, tmp_path):
    out, manifest = gen_dir
    lines = open(manifest).read().splitlines()
    rec = json.loads(lines[1])
    rec["target_image"] = "scenes/nowhere.pfm"
    broken = tmp_path / "broken.jsonl"
    broken.write_text(lines[0] + "\n" + json.dumps(rec) + "\n")
    with pytest.raises(DataError):
        ds.load_manifest(str(broken), check_files=True)
    ds.load_manifest(str(broken), check_files=False)  # lazy load stays fine


# -- pair loading -------------------------------------------------------------


def test_load_pairs_shapes_and_ranges(gen_dir):
    _, manifest = gen_dir
    pairs = ds.load_pairs(manifest, res=16)
    assert len(pairs) == 4
    for arr in (pairs.inputs, pairs.targets, pairs.ldr, pairs.hdr):
        assert arr.shape == (4, 16, 16, 3) and arr.dtype == np.float32
        assert arr.min() >= 0.0 and arr.max() <= 1.0
    assert pairs.alpha.shape == (4, 16, 16)
    assert len(pairs.pair_ids) == len(pairs.scene_ids) == 4


def test_load_pairs_resizes(gen_dir):
    _, manifest = gen_dir
    pairs = ds.load_pairs(manifest, res=8)
    assert pairs.inputs.shape == (4, 8, 8, 3)
    assert pairs.targets.shape == (4, 8, 8, 3)


def test_load_pairs_scene_filter_and_limit(gen_dir):
    _, manifest = gen_dir
    only = ds.load_pairs(manifest, res=16, scenes=["s001"])
    assert set(only.scene_ids) == {"s001"} and len(only) == 2
    two = ds.load_pairs(manifest, res=16, limit=3)
    assert len(two) == 3
    with pytest.raises(DataError):
        ds.load_pairs(manifest, res=16, scenes=["s999"])


def test_load_pairs_ablations(gen_dir):
    _, manifest = gen_dir
    full = ds.load_pairs(manifest, res=16)
    no_ldr = ds.load_pairs(manifest, res=16, ablate="no-ldr")
    assert not no_ldr.ldr.any()
    assert np.array_equal(no_ldr.hdr, full.hdr)
    no_hdr = ds.load_pairs(manifest, res=16, ablate="no-hdr")
    assert not no_hdr.hdr.any()
    assert np.array_equal(no_hdr.ldr, full.ldr)
    no_rot = ds.load_pairs(manifest, res=16, ablate="no-rotation")
    # unaligned conditioning still carries both maps, but from the world frame
    assert no_rot.ldr.any() and no_rot.hdr.any()
    assert not np.allclose(no_rot.ldr, full.ldr, atol=1e-3)
    assert np.array_equal(no_rot.inputs, full.inputs)
    assert np.array_equal(no_rot.targets, full.targets)
    with pytest.raises(DataError):
        ds.load_pairs(manifest, res=16, ablate="no-such")


def test_pairset_subset(gen_dir):
    _, manifest = gen_dir
    pairs = ds.load_pairs(manifest, res=16)
    sub = pairs.subset([2, 0])
    assert len(sub) == 2
    assert sub.pair_ids == [pairs.pair_ids[2], pairs.pair_ids[0]]
    assert np.array_equal(sub.inputs[1], pairs.inputs[0])


def test_targets_are_white_composited_display(gen_dir):
    out, manifest = gen_dir
    _, samples = ds.load_manifest(manifest)
    rec = samples[0]
    gt = hdrio.read_pfm(open(os.path.join(out, rec["target_image"]), "rb").read()).astype(np.float64)
    a = hdrio.read_pfm(open(os.path.join(out, rec["alpha"]), "rb").read()).astype(np.float64)[:, :, 0]
    expect = render.linear_to_srgb(gt * a[:, :, None] + (1.0 - a[:, :, None]))
    pairs = ds.load_pairs(manifest, res=16)
    i = pairs.pair_ids.index(rec["pair_id"])
    assert np.allclose(pairs.targets[i], expect, atol=1e-6)


# -- directional test set -----------------------------------------------------


def test_directional_testset(tmp_path):
    manifest = ds.generate_directional_testset(
        str(tmp_path), n_views=2, n_yaws=3, img_res=16, seed=7
    )
    head, samples = ds.load_manifest(manifest, check_files=True)
    assert head["directional"] is True
    assert len(samples) == 2 * 3
    yaws_by_pose = {}
    for rec in samples:
        assert rec["target_env_world"] == "envs/env_0.hdr"
        yaws_by_pose.setdefault(rec["pose"], []).append(rec["target_env_yaw"])
    for yaws in yaws_by_pose.values():
        assert len(set(yaws)) == len(yaws)  # distinct directions per view
    # flat input lighting: the input env file is constant
    env = hdrio.load_envmap(os.path.join(tmp_path, "envs/ambient.hdr"))
    assert np.allclose(env.pixels, env.pixels.reshape(-1, 3)[0], rtol=1e-2)
    pairs = ds.load_pairs(manifest, res=16)
    assert len(pairs) == 6


# -- field scene --------------------------------------------------------------


def test_field_scene_roundtrip(field_dir):
    out, path = field_dir
    data = ds.load_field_scene(path)
    assert data["img_res"] == 16
    tr, te = data["train"], data["test"]
    assert tr["images"].shape == (8, 16, 16, 3)
    assert te["images"].shape == (2, 16, 16, 3)
    assert tr["alphas"].shape == (8, 16, 16)
    assert tr["target_gt"].shape == (8, 16, 16, 3)
    assert len(tr["cameras"]) == 8 and len(te["cameras"]) == 2
    for cam in tr["cameras"]:
        assert cam.rotation.shape == (3, 3)
    for arr in (tr["images"], tr["target_gt"]):
        assert arr.min() >= 0.0 and arr.max() <= 1.0  # display space
    assert isinstance(data["input_env"], em.EnvMap)


def test_field_scene_deterministic(tmp_path):
    p1 = ds.generate_field_scene(str(tmp_path / "f1"), n_views=8, n_test=1, img_res=16, seed=5)
    p2 = ds.generate_field_scene(str(tmp_path / "f2"), n_views=8, n_test=1, img_res=16, seed=5)
    assert open(p1).read() == open(p2).read()


def test_field_scene_validation(tmp_path):
    with pytest.raises(DataError):
        ds.generate_field_scene(str(tmp_path), n_views=4)
    with pytest.raises(DataError):
        ds.load_field_scene(str(tmp_path / "nothing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    with pytest.raises(DataError):
        ds.load_field_scene(str(bad))
    bad.write_text("not json")
    with pytest.raises(DataError):
        ds.load_field_scene(str(bad))
