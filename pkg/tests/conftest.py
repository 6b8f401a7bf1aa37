"""Shared fixtures.

Heavy artifacts (datasets, trained checkpoints, the 3D pipeline) are built
once and cached under .cache/ keyed by a profile hash, so reruns skip the
expensive work. Delete .cache/ to force a rebuild.
"""

import hashlib
import json
import os
import sys
import time

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from relightlab import dataset as ds
from relightlab import diffusion as df
from relightlab import field3d as f3
from relightlab import metrics as mt

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CACHE = os.path.join(ROOT, ".cache")

# Acceptance-scale profile. Training is the dominant cost: four variants of
# the denoiser at these settings take several hours of single-core CPU;
# cached checkpoints make later runs cheap.
PROFILE = {
    "dataset": {"n_scenes": 72, "n_poses": 4, "n_envs_per_pose": 8, "n_envs": 24,
                "img_res": 32, "seed": 11, "camera_radius": 1.7},
    "train_scenes": 64,  # first N scene ids train; the rest are held out
    "model": {"base_width": 32, "level_multipliers": [1, 2, 4],
              "blocks_per_level": 1, "time_embed_dim": 64, "attention": True,
              "groups": 8},
    "train": {"steps": 12000, "batch_size": 8, "lr": 1e-3, "lr_final": 1e-4,
              "warmup": 300, "ema_decay": 0.999, "seed": 0},
    "directional": {"n_views": 16, "n_yaws": 8, "img_res": 32, "seed": 77},
    "field_scene": {"n_views": 16, "n_test": 4, "img_res": 32, "seed": 5},
    "stage": {"grid_res": 48, "fit_iters": 1500, "stage1_iters": 2500,
              "stage2_iters": 500, "relight_steps": 25, "seed": 0},
}

# How trained checkpoints are sampled when scoring them (chosen on the
# held-out split during calibration, then frozen here for every criterion).
EVAL_PROTOCOL = {"n_steps": 25, "use_ema": True, "seed": 123}


def profile_tag() -> str:
    blob = json.dumps(PROFILE, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:10]


def cache_dir() -> str:
    path = os.path.join(CACHE, f"acceptance_{profile_tag()}")
    os.makedirs(path, exist_ok=True)
    return path


def _train_scene_ids():
    return [f"s{i:03d}" for i in range(PROFILE["train_scenes"])]


@pytest.fixture(scope="session")
def acc_dataset():
    """Paired dataset at acceptance scale; returns the manifest path."""
    out = os.path.join(cache_dir(), "dataset")
    manifest = os.path.join(out, "manifest.jsonl")
    if not os.path.exists(manifest):
        cfg = ds.DatasetConfig(out_dir=out, **PROFILE["dataset"])
        ds.generate_dataset(cfg)
    return manifest


@pytest.fixture(scope="session")
def directional_set():
    out = os.path.join(cache_dir(), "directional")
    manifest = os.path.join(out, "manifest.jsonl")
    if not os.path.exists(manifest):
        ds.generate_directional_testset(out, **PROFILE["directional"])
    return manifest


@pytest.fixture(scope="session")
def field_scene():
    out = os.path.join(cache_dir(), "field_scene")
    manifest = os.path.join(out, "views.json")
    if not os.path.exists(manifest):
        ds.generate_field_scene(out, **PROFILE["field_scene"])
    return manifest


@pytest.fixture(scope="session")
def schedule():
    return df.make_linear_schedule()


def _train_one(manifest: str, ablate: str, ckpt_path: str):
    pairs = ds.load_pairs(
        manifest, res=PROFILE["dataset"]["img_res"], ablate=ablate,
        scenes=_train_scene_ids(),
    )
    net = df.Denoiser(df.DenoiserConfig.from_dict(PROFILE["model"]),
                      seed=PROFILE["train"]["seed"])
    tcfg = df.TrainConfig(**PROFILE["train"])
    _, ema = df.train(net, pairs, tcfg, df.make_linear_schedule(),
                      log_path=ckpt_path.replace(".npz", "_loss.csv"))
    df.save_checkpoint(ckpt_path, net, ema, extra={"ablate": ablate})


def _model_path(ablate: str) -> str:
    return os.path.join(cache_dir(), f"model_{ablate}.npz")


@pytest.fixture(scope="session")
def trained_models(acc_dataset):
    """Checkpoint paths for the full model and the three ablations."""
    paths = {}
    for ablate in df.relight2d.ABLATIONS:
        path = _model_path(ablate)
        if not os.path.exists(path):
            _train_one(acc_dataset, ablate, path)
        paths[ablate] = path
    return paths


@pytest.fixture(scope="session")
def full_model(acc_dataset):
    """Just the un-ablated checkpoint (for tests that don't need all four)."""
    path = _model_path("none")
    if not os.path.exists(path):
        _train_one(acc_dataset, "none", path)
    return path


@pytest.fixture(scope="session")
def held_pairs(acc_dataset):
    """64 held-out pairs from scenes the models never trained on."""
    held = [f"s{i:03d}" for i in range(PROFILE["train_scenes"],
                                       PROFILE["dataset"]["n_scenes"])]
    return ds.load_pairs(acc_dataset, res=PROFILE["dataset"]["img_res"],
                         scenes=held, limit=64)


def _render_views(field, cameras, n_samples, bg):
    return np.stack([f3.field_render(field, cam, n_samples, bg).rgb
                     for cam in cameras])


@pytest.fixture(scope="session")
def relight3d_run(field_scene, full_model):
    """Full 3D pipeline products: fitted/stage1/stage2/SDS fields + stats.

    Runs fit -> stage1 -> stage2 and the SDS baseline once, saves every
    intermediate field plus a stats JSON so the acceptance test only reads.
    """
    out = os.path.join(cache_dir(), "relight3d")
    info_path = os.path.join(out, "info.json")
    paths = {k: os.path.join(out, f"{k}.npz")
             for k in ("field_fit", "field_stage1", "field_relit", "field_sds")}
    if not os.path.exists(info_path):
        os.makedirs(out, exist_ok=True)
        st = PROFILE["stage"]
        data = ds.load_field_scene(field_scene)
        train_v, test_v = data["train"], data["test"]
        net = df.load_checkpoint(full_model, use_ema=EVAL_PROTOCOL["use_ema"])
        sched = df.make_linear_schedule()

        t0 = time.time()
        fit_cfg = f3.FieldFitConfig(grid_res=st["grid_res"], iters=st["fit_iters"],
                                    seed=st["seed"])
        field, fit_info = f3.fit_field(
            train_v["images"], train_v["cameras"], fit_cfg,
            alphas=train_v["alphas"],
            heldout=(test_v["images"], test_v["cameras"]),
        )
        f3.save_field(paths["field_fit"], field)

        s1_cfg = f3.Stage1Config(iters=st["stage1_iters"], seed=st["seed"],
                                 relight_steps=st["relight_steps"])
        stage1, s1_info = f3.stage1_relight(
            field, train_v["images"], train_v["cameras"], data["target_env"],
            net, sched, s1_cfg)
        f3.save_field(paths["field_stage1"], stage1)

        s2_cfg = f3.Stage2Config(iterations=st["stage2_iters"], seed=st["seed"])
        stage2, _ = f3.stage2_refine(
            stage1, train_v["images"], train_v["cameras"], data["target_env"],
            net, sched, s2_cfg)
        f3.save_field(paths["field_relit"], stage2)
        elapsed = time.time() - t0

        sds = f3.sds_refine(
            field, train_v["images"], train_v["cameras"], data["target_env"],
            net, sched, iterations=st["stage2_iters"], seed=st["seed"])
        f3.save_field(paths["field_sds"], sds)

        gt = test_v["target_gt"]
        before = _render_views(field, test_v["cameras"], fit_cfg.n_samples, fit_cfg.bg)
        after = _render_views(stage2, test_v["cameras"], fit_cfg.n_samples, fit_cfg.bg)
        sds_r = _render_views(sds, test_v["cameras"], fit_cfg.n_samples, fit_cfg.bg)
        info = {
            "heldout_fit_psnr": fit_info["heldout_psnr"],
            "stage1_losses": [float(v) for v in s1_info["losses"]],
            "test_psnr_unrelit": [mt.psnr(before[i], gt[i]) for i in range(len(gt))],
            "test_psnr_relit": [mt.psnr(after[i], gt[i]) for i in range(len(gt))],
            "sat_two_stage": f3.saturation_fraction(after),
            "sat_sds": f3.saturation_fraction(sds_r),
            "elapsed_s": elapsed,
        }
        with open(info_path, "w") as fh:
            json.dump(info, fh, indent=1, sort_keys=True)
    with open(info_path) as fh:
        info = json.load(fh)
    return {**paths, "info": info}


# ---------------------------------------------------------------------------
# Acceptance reporting: one PASS/FAIL line per criterion at the end.

_CRITERIA = {}


def record_criterion(number: int, label: str, passed: bool, detail: str = ""):
    _CRITERIA[number] = (label, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        label, passed, detail = _CRITERIA[number]
        state = "PASS" if passed else "FAIL"
        suffix = f"  [{detail}]" if detail else ""
        tr.write_line(f"criterion {number} {state}  {label}{suffix}")
