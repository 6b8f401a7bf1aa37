"""Single command-line entry point for the relighting toolkit.

Subcommands: envtool, gendata, train, relight, relight3d, eval. Settings
come from defaults, then an optional key=value config file, then explicit
flags (later wins). Every run writes a resolved-config snapshot next to
its outputs so any result can be regenerated.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import dataset as ds
from . import envmap as em
from . import field3d as f3
from . import hdrio
from . import metrics as mt
from . import render
from .backend import backend_name
from .errors import DataError, NumericError, ParseError

log = logging.getLogger("relightlab")


class _Parser(argparse.ArgumentParser):
    """argparse maps usage errors to exit 2 by default; this CLI wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(self._exit_with(message))

    def _exit_with(self, message) -> int:
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        return 1


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _int_list(text: str):
    try:
        return tuple(int(v) for v in str(text).replace("x", ",").split(",") if v != "")
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer list: {text!r}") from exc


def _str_list(text: str):
    return [v for v in str(text).split(",") if v]


# ---------------------------------------------------------------------------
# Config file plumbing


def read_config_file(path: str) -> dict:
    """Plain key=value lines; '#' starts a comment; keys are flag names."""
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for ln_no, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{ln_no}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("_", "-")] = value.strip()
    return out


def _apply_config(sub_parser: argparse.ArgumentParser, sub_argv, cfg_path: str):
    """Re-parse with config entries inserted before explicit flags."""
    known = {}
    for action in sub_parser._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                known[opt[2:]] = action
    extra = []
    for key, value in read_config_file(cfg_path).items():
        if key == "config":
            continue
        if key not in known:
            raise DataError(f"unknown config key {key!r} in {cfg_path}")
        extra.extend([f"--{key}", value])
    # explicit flags come last, so they win
    return sub_parser.parse_args(extra + list(sub_argv))


def write_snapshot(directory: str, sub: str, ns: argparse.Namespace) -> str:
    """Resolved key=value snapshot; deterministic for digest comparisons."""
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, f"config_{sub}.txt")
    skip = {"config", "func", "verbose"}
    with open(path, "w") as fh:
        fh.write(f"# relightlab {sub} resolved configuration\n")
        for key in sorted(vars(ns)):
            if key in skip:
                continue
            value = getattr(ns, key)
            if isinstance(value, (list, tuple)):
                value = ",".join(str(v) for v in value)
            fh.write(f"{key} = {value}\n")
    return path


# ---------------------------------------------------------------------------
# envtool


def _ensure_parent(path: str):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _load_env_any(path: str) -> em.EnvMap:
    ext = os.path.splitext(path)[1].lower()
    if ext in (".hdr", ".pic"):
        return hdrio.load_envmap(path)
    if ext == ".pfm":
        try:
            with open(path, "rb") as fh:
                return em.EnvMap(hdrio.read_pfm(fh.read()))
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
    raise DataError(f"unsupported input format {ext!r} (use .hdr or .pfm)")


def _save_env_any(path: str, env: em.EnvMap):
    _ensure_parent(path)
    ext = os.path.splitext(path)[1].lower()
    if ext in (".hdr", ".pic"):
        hdrio.save_envmap(path, env)
    elif ext == ".pfm":
        with open(path, "wb") as fh:
            fh.write(hdrio.write_pfm(env.pixels.astype(np.float32)))
    else:
        raise DataError(
            f"unsupported output format {ext!r} (use .hdr or .pfm; tonemap for .png)"
        )


def cmd_envtool(ns) -> int:
    env = _load_env_any(ns.input)
    if ns.action == "rotate":
        rot = em.euler_rotation(ns.yaw, ns.pitch, ns.roll)
        _save_env_any(ns.output, em.rotate_envmap(env, rot, mode=ns.mode))
    elif ns.action == "tonemap":
        if os.path.splitext(ns.output)[1].lower() != ".png":
            raise DataError("tonemap writes .png output")
        _ensure_parent(ns.output)
        hdrio.write_png(ns.output, em.tonemap_ldr(env).pixels)
    elif ns.action == "lognorm":
        norm = em.lognorm_hdr(env)
        _save_env_any(ns.output, em.EnvMap(np.maximum(norm.pixels, 1e-12)))
        print(f"scale_reference {norm.scale_reference:.9g}")
    elif ns.action == "convert":
        _save_env_any(ns.output, env)
    else:  # pragma: no cover - argparse restricts choices
        raise DataError(f"unknown envtool action {ns.action!r}")
    write_snapshot(os.path.dirname(os.path.abspath(ns.output)), f"envtool_{ns.action}", ns)
    print(ns.output)
    return 0


# ---------------------------------------------------------------------------
# gendata


def cmd_gendata(ns) -> int:
    env_res = tuple(ns.env_res)
    if len(env_res) != 2:
        raise DataError(f"env-res needs HxW, got {ns.env_res}")
    if ns.directional:
        manifest = ds.generate_directional_testset(
            ns.out, n_views=ns.views, n_yaws=ns.yaws,
            img_res=ns.img_res, env_res=env_res, seed=ns.seed,
        )
    elif ns.field_scene:
        manifest = ds.generate_field_scene(
            ns.out, n_views=ns.views, n_test=ns.test_views,
            img_res=ns.img_res, env_res=env_res, seed=ns.seed,
        )
    else:
        poses, envs_per_pose = ns.poses, ns.envs_per_pose
        if ns.full_scale_counts:
            poses, envs_per_pose = 12, 16
        cfg = ds.DatasetConfig(
            out_dir=ns.out, n_scenes=ns.scenes, n_poses=poses,
            n_envs_per_pose=envs_per_pose, n_envs=max(ns.envs, envs_per_pose + 1),
            img_res=ns.img_res, env_res=env_res, seed=ns.seed,
        )
        manifest = ds.generate_dataset(cfg)
        head, samples = ds.load_manifest(manifest)
        print(
            f"scenes {cfg.n_scenes} poses/scene {cfg.n_poses} "
            f"lightings/pose {cfg.n_envs_per_pose + 1} pairs {len(samples)}"
        )
    write_snapshot(ns.out, "gendata", ns)
    print(manifest)
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(ns) -> int:
    from . import diffusion as df

    pairs = ds.load_pairs(
        ns.manifest, res=ns.res, ablate=ns.ablate,
        scenes=ns.scenes or None, limit=ns.limit,
    )
    log.info("loaded %d pairs at %dx%d", len(pairs), ns.res, ns.res)
    model_cfg = df.DenoiserConfig(
        base_width=ns.base_width,
        level_multipliers=tuple(ns.level_mults),
        blocks_per_level=ns.blocks,
        time_embed_dim=ns.time_dim,
        attention=ns.attention,
    )
    net = df.Denoiser(model_cfg, seed=ns.seed)
    schedule = df.make_linear_schedule()
    tcfg = df.TrainConfig(
        steps=ns.steps, batch_size=ns.batch_size, lr=ns.lr, lr_final=ns.lr_final,
        warmup=ns.warmup, ema_decay=ns.ema_decay, seed=ns.seed,
    )
    os.makedirs(ns.out, exist_ok=True)
    write_snapshot(ns.out, "train", ns)
    losses, ema = df.train(net, pairs, tcfg, schedule, log_path=os.path.join(ns.out, "loss.csv"))
    ckpt = os.path.join(ns.out, "checkpoint.npz")
    df.save_checkpoint(
        ckpt, net, ema,
        extra={"ablate": ns.ablate, "train": tcfg.to_dict(), "res": ns.res,
               "n_pairs": len(pairs)},
    )
    head = float(np.mean(losses[: max(1, len(losses) // 10)]))
    tail = float(np.mean(losses[-max(1, len(losses) // 10):]))
    print(f"steps {len(losses)} loss_first10% {head:.4f} loss_last10% {tail:.4f}")
    print(ckpt)
    return 0


# ---------------------------------------------------------------------------
# relight


def _load_display_image(path: str) -> np.ndarray:
    ext = os.path.splitext(path)[1].lower()
    if ext == ".png":
        return hdrio.read_png(path)
    if ext == ".pfm":
        try:
            with open(path, "rb") as fh:
                return np.clip(hdrio.read_pfm(fh.read()), 0.0, 1.0)
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
    raise DataError(f"unsupported image format {ext!r} (use .png or .pfm)")


def cmd_relight(ns) -> int:
    from . import diffusion as df

    net = df.load_checkpoint(ns.checkpoint, use_ema=not ns.raw_weights)
    image = _load_display_image(ns.input)
    env = _load_env_any(ns.env)
    rotation = em.euler_rotation(ns.yaw, ns.pitch, ns.roll)
    out = df.relight_image(
        net, df.make_linear_schedule(), image, env, rotation,
        n_steps=ns.steps, seed=ns.seed, ablate=ns.ablate,
    )
    _ensure_parent(ns.output)
    hdrio.write_png(ns.output, out)
    write_snapshot(os.path.dirname(os.path.abspath(ns.output)), "relight", ns)
    print(ns.output)
    return 0


# ---------------------------------------------------------------------------
# relight3d


def _render_views(field, cameras, n_samples, bg):
    return np.stack(
        [f3.field_render(field, cam, n_samples=n_samples, bg=bg).rgb for cam in cameras]
    ).astype(np.float32)


def cmd_relight3d(ns) -> int:
    from . import diffusion as df

    data = ds.load_field_scene(ns.views)
    net = df.load_checkpoint(ns.checkpoint, use_ema=not ns.raw_weights)
    schedule = df.make_linear_schedule()
    train_v, test_v = data["train"], data["test"]
    os.makedirs(ns.out, exist_ok=True)
    write_snapshot(ns.out, "relight3d", ns)

    fit_cfg = f3.FieldFitConfig(
        grid_res=ns.grid_res, iters=ns.fit_iters, seed=ns.seed,
        coarse_res=min(ns.grid_res, f3.FieldFitConfig.coarse_res),
    )
    field, fit_info = f3.fit_field(
        train_v["images"], train_v["cameras"], fit_cfg,
        alphas=train_v["alphas"], heldout=(test_v["images"], test_v["cameras"]),
    )
    f3.save_field(os.path.join(ns.out, "field_fit.npz"), field)
    print(f"fit: heldout_psnr {fit_info['heldout_psnr']:.2f} dB")

    target_env = data["target_env"]
    if ns.baseline == "sds":
        relit = f3.sds_refine(
            field, train_v["images"], train_v["cameras"], target_env, net, schedule,
            iterations=ns.stage2_iters, seed=ns.seed,
        )
        stem = "field_sds"
    else:
        s1_cfg = f3.Stage1Config(iters=ns.stage1_iters, seed=ns.seed,
                                 relight_steps=ns.relight_steps)
        stage1, s1_info = f3.stage1_relight(
            field, train_v["images"], train_v["cameras"], target_env, net, schedule, s1_cfg,
        )
        l0, l1 = s1_info["losses"][0], s1_info["losses"][-1]
        print(f"stage1: loss {l0:.5f} -> {l1:.5f}")
        s2_cfg = f3.Stage2Config(iterations=ns.stage2_iters, seed=ns.seed)
        relit, info = f3.stage2_refine(
            stage1, train_v["images"], train_v["cameras"], target_env, net, schedule, s2_cfg,
        )
        stem = "field_relit"
    f3.save_field(os.path.join(ns.out, f"{stem}.npz"), relit)

    before = _render_views(field, test_v["cameras"], fit_cfg.n_samples, fit_cfg.bg)
    after = _render_views(relit, test_v["cameras"], fit_cfg.n_samples, fit_cfg.bg)
    gt = test_v["target_gt"]
    rows = []
    for i in range(gt.shape[0]):
        rows.append((mt.psnr(before[i], gt[i]), mt.psnr(after[i], gt[i])))
        hdrio.write_png(os.path.join(ns.out, f"test_{i:02d}_before.png"), before[i])
        hdrio.write_png(os.path.join(ns.out, f"test_{i:02d}_after.png"), after[i])
    sat = f3.saturation_fraction(after)
    with open(os.path.join(ns.out, "relight3d_summary.json"), "w") as fh:
        json.dump(
            {
                "mode": ns.baseline or "two-stage",
                "heldout_fit_psnr": fit_info["heldout_psnr"],
                "test_psnr_unrelit": [r[0] for r in rows],
                "test_psnr_relit": [r[1] for r in rows],
                "saturation_fraction": sat,
            },
            fh, sort_keys=True, indent=1,
        )
    for i, (b, a) in enumerate(rows):
        print(f"test view {i}: unrelit {b:.2f} dB -> relit {a:.2f} dB")
    print(f"saturated_fraction {sat:.4f}")
    print(os.path.join(ns.out, f"{stem}.npz"))
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(ns) -> int:
    head, samples = ds.load_manifest(ns.manifest)
    if not samples:
        raise DataError(f"no samples in {ns.manifest}")
    root = os.path.dirname(os.path.abspath(ns.manifest))
    preds, gts, alphas, ids = [], [], [], []
    for rec in samples:
        pid = rec["pair_id"]
        pred_path = os.path.join(ns.pred_dir, ns.pattern.format(pair_id=pid))
        if not os.path.exists(pred_path):
            if ns.skip_missing:
                continue
            raise DataError(f"missing prediction {pred_path}")
        preds.append(_load_display_image(pred_path))
        with open(os.path.join(root, rec["target_image"]), "rb") as fh:
            gt_rgb = hdrio.read_pfm(fh.read())
        with open(os.path.join(root, rec["alpha"]), "rb") as fh:
            alpha = hdrio.read_pfm(fh.read())[:, :, 0]
        gts.append(render.linear_to_srgb(gt_rgb * alpha[:, :, None] + (1.0 - alpha[:, :, None])))
        alphas.append(alpha)
        ids.append(pid)
    if not preds:
        raise DataError("no predictions matched the manifest")
    records = mt.eval_suite(
        np.stack(preds), np.stack(gts).astype(np.float32),
        pair_ids=ids, mask_mode=ns.mask_mode, alphas=np.stack(alphas),
    )
    _ensure_parent(ns.out)
    mt.write_csv(records, ns.out)
    write_snapshot(os.path.dirname(os.path.abspath(ns.out)), "eval", ns)
    print(mt.format_table(records))
    print(ns.out)
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> _Parser:
    p = _Parser(prog="relightlab", description=__doc__, allow_abbrev=False)
    p.add_argument("--version", action="version", version="relightlab 0.1.0")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    def common(sp):
        sp.add_argument("--config", help="key=value config file; flags override it")
        sp.add_argument("-v", "--verbose", action="count", default=0)

    sp = sub.add_parser("envtool",
                        help="rotate / tonemap / lognorm / convert env maps")
    sp.add_argument("action", choices=("rotate", "tonemap", "lognorm", "convert"))
    sp.add_argument("input")
    sp.add_argument("output")
    sp.add_argument("--yaw", type=float, default=0.0, help="degrees about +Y")
    sp.add_argument("--pitch", type=float, default=0.0, help="degrees about +X")
    sp.add_argument("--roll", type=float, default=0.0, help="degrees about +Z")
    sp.add_argument("--mode", choices=("bilinear", "nearest"), default="bilinear")
    common(sp)
    sp.set_defaults(func=cmd_envtool)

    sp = sub.add_parser("gendata", help="render paired datasets")
    sp.add_argument("--out", required=True)
    sp.add_argument("--scenes", type=int, default=64)
    sp.add_argument("--poses", type=int, default=4)
    sp.add_argument("--envs-per-pose", type=int, default=8)
    sp.add_argument("--envs", type=int, default=24, help="env library size")
    sp.add_argument("--img-res", type=int, default=64)
    sp.add_argument("--env-res", type=_int_list, default=(16, 32), metavar="HxW")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--full-scale-counts", action="store_true",
                    help="12 poses x 17 lightings per scene")
    sp.add_argument("--directional", action="store_true",
                    help="yaw-rotated copies of one directional env")
    sp.add_argument("--field-scene", action="store_true",
                    help="multi-view captures of one scene for 3D relighting")
    sp.add_argument("--views", type=int, default=16,
                    help="views for --directional / --field-scene")
    sp.add_argument("--yaws", type=int, default=8, help="yaw count for --directional")
    sp.add_argument("--test-views", type=int, default=4, help="held-out views for --field-scene")
    common(sp)
    sp.set_defaults(func=cmd_gendata)

    sp = sub.add_parser("train", help="train the conditional denoiser")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--ablate", choices=("none", "no-ldr", "no-hdr", "no-rotation"),
                    default="none")
    sp.add_argument("--res", type=int, default=32)
    sp.add_argument("--scenes", type=_str_list, default=[],
                    help="comma list of scene ids to train on (default all)")
    sp.add_argument("--limit", type=int, default=None, help="cap on pair count")
    sp.add_argument("--steps", type=int, default=6000)
    sp.add_argument("--batch-size", type=int, default=8)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--lr-final", type=float, default=1e-4)
    sp.add_argument("--warmup", type=int, default=200)
    sp.add_argument("--ema-decay", type=float, default=0.999)
    sp.add_argument("--base-width", type=int, default=16)
    sp.add_argument("--level-mults", type=_int_list, default=(1, 2))
    sp.add_argument("--blocks", type=int, default=1)
    sp.add_argument("--time-dim", type=int, default=48)
    sp.add_argument("--attention", type=_bool, default=True)
    sp.add_argument("--seed", type=int, default=0)
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("relight",
                        help="relight one image under a new env map")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True, help="display-space .png or .pfm")
    sp.add_argument("--env", required=True, help="world-frame target env (.hdr/.pfm)")
    sp.add_argument("--output", required=True, help=".png output path")
    sp.add_argument("--yaw", type=float, default=0.0, help="camera-to-world yaw, degrees")
    sp.add_argument("--pitch", type=float, default=0.0)
    sp.add_argument("--roll", type=float, default=0.0)
    sp.add_argument("--steps", type=int, default=25, help="DDIM steps")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--ablate", choices=("none", "no-ldr", "no-hdr", "no-rotation"),
                    default="none")
    sp.add_argument("--raw-weights", action="store_true", help="skip the EMA weights")
    common(sp)
    sp.set_defaults(func=cmd_relight)

    sp = sub.add_parser("relight3d",
                        help="two-stage radiance-field relighting")
    sp.add_argument("--views", required=True, help="views.json from gendata --field-scene")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--baseline", choices=("sds",), default=None,
                    help="run the score-distillation baseline instead")
    sp.add_argument("--grid-res", type=int, default=64)
    sp.add_argument("--fit-iters", type=int, default=f3.FieldFitConfig.iters)
    sp.add_argument("--stage1-iters", type=int, default=f3.Stage1Config.iters)
    sp.add_argument("--stage2-iters", type=int, default=f3.Stage2Config.iterations)
    sp.add_argument("--relight-steps", type=int, default=25)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--raw-weights", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_relight3d)

    sp = sub.add_parser("eval",
                        help="score predictions against manifest ground truth")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--pred-dir", required=True)
    sp.add_argument("--out", required=True, help="CSV output path")
    sp.add_argument("--pattern", default="{pair_id}.png")
    sp.add_argument("--mask-mode", choices=("full", "foreground"), default="foreground")
    sp.add_argument("--skip-missing", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if getattr(ns, "command", None) is None:
            parser.print_help(sys.stderr)
            return 1
        if getattr(ns, "config", None):
            sub_argv = [a for a in argv[1:]]
            sub_map = {
                a.dest: a for a in parser._actions
                if isinstance(a, argparse._SubParsersAction)
            }
            sub_parser = next(iter(sub_map.values())).choices[ns.command]
            ns2 = _apply_config(sub_parser, sub_argv, ns.config)
            ns2.command = ns.command
            ns = ns2
        level = logging.WARNING - 10 * min(2, getattr(ns, "verbose", 0))
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
        log.debug("kernel backend: %s", backend_name())
        return ns.func(ns)
    except SystemExit as exc:
        code = exc.code
        return 0 if code is None else int(code) if str(code).isdigit() else 1
    except (DataError, ParseError) as exc:
        print(f"relightlab: data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"relightlab: file error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"relightlab: numeric failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"relightlab: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
