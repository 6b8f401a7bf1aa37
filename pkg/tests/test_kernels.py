"""Numba and numpy kernel backends must agree; the env flag must pick them."""

import subprocess
import sys

import numpy as np
import pytest

from relightlab import _kernels_np as knp
from relightlab import backend
from relightlab import envmap as em
from relightlab import scene as sc

knb = pytest.importorskip("relightlab._kernels_nb")

KERNEL_NAMES = (
    "intersect", "occluded", "shade", "transport_rows", "shade_area",
    "volume_render", "volume_render_grad",
)


def packed_scene():
    prims = (
        sc.Primitive.sphere((0.1, 0.0, -0.2), 0.55, sc.Brdf((0.7, 0.3, 0.2), 0.4, 0.04, 0.3)),
        sc.Primitive.box((-0.9, -0.8, -0.3), (-0.2, -0.1, 0.4), sc.Brdf((0.2, 0.5, 0.8), 0.2, 0.1, 0.6)),
        sc.Primitive.plane((0.0, -0.8, 0.0), (0.0, 1.0, 0.0), sc.Brdf((0.8, 0.8, 0.75), 0.7, 0.04, 0.1)),
    )
    return sc.pack_prims(sc.Scene(prims, np.zeros(3), None))


@pytest.fixture(scope="module")
def hit_data():
    prims = packed_scene()
    cam = sc.Camera(
        position=np.array([0.0, 0.6, 2.4]),
        rotation=sc.look_at(np.array([0.0, 0.6, 2.4]), np.zeros(3)),
        vfov=45.0,
        res=(12, 12),
    )
    ro, rd = sc.camera_rays(cam)
    t, idx, normal = knp.intersect(prims, ro, rd)
    hit = idx >= 0
    pts = ro[hit] + t[hit, None] * rd[hit]
    return prims, ro, rd, pts, normal[hit], -rd[hit], idx[hit]


def test_backend_flag_selection():
    env_template = {"PYTHONPATH": "src"}
    for choice, expect in (("numpy", "numpy"), ("numba", "numba"), ("auto", "numba")):
        out = subprocess.run(
            [sys.executable, "-c",
             "from relightlab.backend import backend_name; print(backend_name())"],
            capture_output=True, text=True,
            env={**__import__('os').environ, "RELIGHTLAB_BACKEND": choice},
        )
        assert out.returncode == 0, out.stderr
        assert out.stdout.strip() == expect
    bad = subprocess.run(
        [sys.executable, "-c", "import relightlab.backend"],
        capture_output=True, text=True,
        env={**__import__('os').environ, "RELIGHTLAB_BACKEND": "cuda"},
    )
    assert bad.returncode != 0 and "RELIGHTLAB_BACKEND" in bad.stderr


def test_active_backend_module_is_complete():
    mod = backend.get_kernels()
    assert backend.backend_name() in ("numba", "numpy")
    for name in KERNEL_NAMES:
        assert hasattr(mod, name) and hasattr(knp, name)


def test_intersect_parity(hit_data):
    prims, ro, rd, *_ = hit_data
    t_a, i_a, n_a = knp.intersect(prims, ro, rd)
    t_b, i_b, n_b = knb.intersect(prims, ro, rd)
    finite = np.isfinite(t_a)
    assert np.array_equal(finite, np.isfinite(t_b))
    assert np.allclose(t_a[finite], t_b[finite], rtol=1e-12, atol=1e-12)
    assert np.array_equal(i_a, i_b)
    assert np.allclose(n_a, n_b, atol=1e-12)


def test_occluded_parity(hit_data):
    prims, _, _, pts, normals, _, _ = hit_data
    rng = np.random.default_rng(0)
    dirs = rng.standard_normal((pts.shape[0], 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = pts + 1e-4 * normals
    t_max = np.full(pts.shape[0], np.inf)
    a = knp.occluded(prims, origins, dirs, t_max)
    b = knb.occluded(prims, origins, dirs, t_max)
    assert np.array_equal(a, b)
    assert a.any() and not a.all()  # scene has both blocked and open directions


def test_shade_parity(hit_data):
    prims, _, _, pts, normals, wo, midx = hit_data
    h, w = 8, 16
    env_dirs = em.texel_directions(h, w).reshape(-1, 3)
    env_omega = em.solid_angles(h, w).reshape(-1)
    rng = np.random.default_rng(1)
    env_px = rng.random((h * w, 3)) * 2.0
    a = knp.shade(prims, pts, normals, wo, midx, env_px, env_dirs, env_omega)
    b = knb.shade(prims, pts, normals, wo, midx, env_px, env_dirs, env_omega)
    assert np.allclose(a, b, rtol=1e-9, atol=1e-12)


def test_transport_rows_parity(hit_data):
    prims, _, _, pts, normals, wo, midx = hit_data
    h, w = 8, 16
    env_dirs = em.texel_directions(h, w).reshape(-1, 3)
    env_omega = em.solid_angles(h, w).reshape(-1)
    a = knp.transport_rows(prims, pts, normals, wo, midx, env_dirs, env_omega)
    b = knb.transport_rows(prims, pts, normals, wo, midx, env_dirs, env_omega)
    assert a.dtype == b.dtype == np.float32
    denom = np.maximum(np.abs(a), 1e-6)
    assert (np.abs(a - b) / denom).max() < 1e-5


def test_shade_area_parity(hit_data):
    prims, _, _, pts, normals, wo, midx = hit_data
    corner = np.array([-0.5, 1.6, -0.5])
    e1 = np.array([1.0, 0.0, 0.0])
    e2 = np.array([0.0, 0.0, 1.0])
    radiance = np.array([11.0, 9.0, 7.0])
    a = knp.shade_area(prims, pts, normals, wo, midx, corner, e1, e2, radiance, 4)
    b = knb.shade_area(prims, pts, normals, wo, midx, corner, e1, e2, radiance, 4)
    assert np.allclose(a, b, rtol=1e-9, atol=1e-12)


@pytest.fixture(scope="module")
def volume_case():
    rng = np.random.default_rng(2)
    res = 10
    density = rng.random((res,) * 3) * 3.0
    appearance = rng.random((res,) * 3 + (3,))
    bbox_min = np.array([-1.0, -1.0, -1.0])
    voxel = 2.0 / res
    n = 40
    dirs = rng.standard_normal((n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    ro = -2.2 * dirs + rng.uniform(-0.3, 0.3, (n, 3))
    bg = np.array([1.0, 0.9, 0.8])
    return density, appearance, bbox_min, voxel, ro, dirs, bg


def test_volume_render_parity(volume_case):
    density, appearance, bbox_min, voxel, ro, dirs, bg = volume_case
    rgb_a, al_a = knp.volume_render(density, appearance, bbox_min, voxel, ro, dirs, 24, bg)
    rgb_b, al_b = knb.volume_render(density, appearance, bbox_min, voxel, ro, dirs, 24, bg)
    assert np.allclose(rgb_a, rgb_b, rtol=1e-10, atol=1e-12)
    assert np.allclose(al_a, al_b, rtol=1e-10, atol=1e-12)


def test_volume_render_grad_parity(volume_case):
    density, appearance, bbox_min, voxel, ro, dirs, bg = volume_case
    rng = np.random.default_rng(3)
    d_rgb = rng.standard_normal((ro.shape[0], 3))
    d_alpha = rng.standard_normal(ro.shape[0])
    out_a = knp.volume_render_grad(
        density, appearance, bbox_min, voxel, ro, dirs, 24, bg, d_rgb, d_alpha
    )
    out_b = knb.volume_render_grad(
        density, appearance, bbox_min, voxel, ro, dirs, 24, bg, d_rgb, d_alpha
    )
    for a, b in zip(out_a, out_b):
        assert np.allclose(a, b, rtol=1e-8, atol=1e-10)


def test_full_render_image_cross_backend():
    """End to end: the public renderer gives the same image under both backends."""
    code = (
        "import numpy as np, json\n"
        "from relightlab import render, scene as sc, envmap as em, dataset as ds\n"
        "rng = np.random.default_rng(4)\n"
        "scene = ds.random_scene(rng, with_light=False)\n"
        "cam = sc.sample_poses(1, 2.0, seed=1, res=(16, 16))[0]\n"
        "env = ds.make_env(np.random.default_rng(5))\n"
        "img = render.render_image(scene, cam, env)\n"
        "print(json.dumps([float(img.rgb.sum()), float(img.alpha.sum()),"
        " float(img.rgb[7, 7, 0])]))\n"
    )
    vals = {}
    for choice in ("numpy", "numba"):
        out = subprocess.run(
            [sys.executable, "-c", code], capture_output=True, text=True,
            env={**__import__('os').environ, "RELIGHTLAB_BACKEND": choice},
        )
        assert out.returncode == 0, out.stderr
        vals[choice] = np.array(eval(out.stdout.strip()))
    assert np.allclose(vals["numpy"], vals["numba"], rtol=1e-9)
