"""Timing comparison of the numba kernels against the numpy fallback.

Run as a script; it re-executes itself once per backend via a subprocess so
each process imports exactly one kernel flavor (backend choice is fixed at
import time). Prints a small table plus the speedup ratio.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--rays 4096]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _time_case(fn, repeat: int) -> float:
    fn()  # warm-up: triggers JIT compilation on the numba path
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_backend(rays: int, repeat: int) -> dict:
    from relightlab.backend import backend_name, get_kernels
    from relightlab import dataset as ds, render, scene as sc

    kern = get_kernels()
    rng = np.random.default_rng(0)
    scene = ds.random_scene(rng)
    cam = sc.sample_poses(1, 2.0, seed=1, res=(64, 64))[0]
    env = ds.make_env(rng)

    results = {"backend": backend_name()}

    results["render_image_64"] = _time_case(
        lambda: render.render_image(scene, cam, env), repeat
    )
    results["build_transport_64"] = _time_case(
        lambda: render.build_transport(scene, cam, (16, 32)), repeat
    )

    from relightlab import field3d as f3

    field = f3.make_field(64)
    field.density += np.abs(rng.standard_normal(field.density.shape)).astype(np.float32)
    field.appearance[...] = rng.random(field.appearance.shape, dtype=np.float32)
    origins = np.tile(np.array([0.0, 0.0, 2.0]), (rays, 1))
    dirs = rng.standard_normal((rays, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    d_rgb = rng.standard_normal((rays, 3)) * 1e-3
    d_alpha = np.zeros(rays)

    results[f"volume_render_{rays}"] = _time_case(
        lambda: f3.render_rays(field, origins, dirs, 128), repeat
    )
    results[f"volume_render_grad_{rays}"] = _time_case(
        lambda: f3.render_rays_grad(field, origins, dirs, d_rgb, d_alpha, 128), repeat
    )
    # direct kernel-level check that both modules expose the same entry points
    results["kernel_module"] = kern.__name__
    return results


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--rays", type=int, default=4096)
    ap.add_argument("--single", choices=("numba", "numpy"), default=None,
                    help=argparse.SUPPRESS)  # internal: one backend per process
    ns = ap.parse_args()

    if ns.single:
        print(json.dumps(run_backend(ns.rays, ns.repeat)))
        return 0

    rows = {}
    for backend in ("numpy", "numba"):
        env = dict(os.environ, RELIGHTLAB_BACKEND=backend)
        proc = subprocess.run(
            [sys.executable, os.path.abspath(__file__),
             "--single", backend, "--repeat", str(ns.repeat), "--rays", str(ns.rays)],
            capture_output=True, text=True, env=env,
        )
        if proc.returncode != 0:
            print(f"{backend} backend failed:\n{proc.stderr}", file=sys.stderr)
            if backend == "numba":
                continue  # still print numpy-only results
            return 1
        rows[backend] = json.loads(proc.stdout.strip().splitlines()[-1])

    cases = [k for k in rows.get("numpy", {}) if k not in ("backend", "kernel_module")]
    width = max(len(c) for c in cases) + 2
    print(f"{'case':<{width}}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for case in cases:
        t_np = rows["numpy"][case]
        t_nb = rows.get("numba", {}).get(case)
        if t_nb:
            print(f"{case:<{width}}{t_np * 1e3:>10.1f}ms{t_nb * 1e3:>10.1f}ms{t_np / t_nb:>9.1f}x")
        else:
            print(f"{case:<{width}}{t_np * 1e3:>10.1f}ms{'-':>12}{'-':>10}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
