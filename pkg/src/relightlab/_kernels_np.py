"""Pure-numpy compute kernels: ray tracing, shading, transport, volumes.

This is the fallback backend; `_kernels_nb` mirrors every signature with
numba-compiled loops. Primitives arrive packed as a (P, 16) float64 array:
column 0 is the shape code (0 sphere, 1 plane, 2 box), columns 1:10 hold
shape parameters, 10:13 albedo, 13 roughness, 14 Fresnel f0, 15 specular
weight. Shading points index into that array for their material.
"""

import numpy as np

T_MIN = 1e-5
SHADOW_BIAS = 1e-4
ALPHA_CAP = 1.0 - 1e-7
ROUGH_FLOOR = 0.05

SPHERE, PLANE, BOX = 0, 1, 2


# ---------------------------------------------------------------------------
# Ray-primitive intersection


def _prim_ts(prims: np.ndarray, ro: np.ndarray, rd: np.ndarray) -> np.ndarray:
    """Hit distance of every ray against every primitive; inf on miss.

    Returns (P, N). Only distances > T_MIN count.
    """
    n = ro.shape[0]
    out = np.full((prims.shape[0], n), np.inf)
    with np.errstate(divide="ignore"):
        inv = 1.0 / rd  # +-inf on zero components; slabs use nan-ignoring fmin/fmax
    for p in range(prims.shape[0]):
        kind = int(prims[p, 0])
        if kind == SPHERE:
            center, radius = prims[p, 1:4], prims[p, 4]
            oc = ro - center
            b = np.einsum("ij,ij->i", oc, rd)
            disc = b * b - (np.einsum("ij,ij->i", oc, oc) - radius * radius)
            ok = disc >= 0.0
            root = np.sqrt(np.where(ok, disc, 0.0))
            t_near = -b - root
            t_far = -b + root
            t = np.where(t_near > T_MIN, t_near, t_far)
            out[p] = np.where(ok & (t > T_MIN), t, np.inf)
        elif kind == PLANE:
            point, normal = prims[p, 1:4], prims[p, 4:7]
            denom = rd @ normal
            with np.errstate(divide="ignore", invalid="ignore"):
                t = ((point - ro) @ normal) / denom
            ok = (np.abs(denom) > 1e-12) & (t > T_MIN)
            out[p] = np.where(ok, t, np.inf)
        else:
            lo, hi = prims[p, 1:4], prims[p, 4:7]
            with np.errstate(invalid="ignore"):
                t1 = (lo - ro) * inv
                t2 = (hi - ro) * inv
            t_near = np.fmin(t1, t2).max(axis=1)
            t_far = np.fmax(t1, t2).min(axis=1)
            ok = (t_near <= t_far) & (t_far > T_MIN)
            t = np.where(t_near > T_MIN, t_near, t_far)
            out[p] = np.where(ok, t, np.inf)
    return out


def intersect(prims: np.ndarray, ro: np.ndarray, rd: np.ndarray):
    """Nearest hit per ray: (t, prim index or -1, outward normal vs the ray)."""
    n = ro.shape[0]
    if prims.shape[0] == 0:
        return np.full(n, np.inf), np.full(n, -1, np.int64), np.zeros((n, 3))
    ts = _prim_ts(prims, ro, rd)
    idx = np.argmin(ts, axis=0)
    t = ts[idx, np.arange(n)]
    hit = np.isfinite(t)
    idx = np.where(hit, idx, -1)
    normal = np.zeros((n, 3))
    pts = ro + np.where(hit, t, 0.0)[:, None] * rd
    for p in range(prims.shape[0]):
        sel = hit & (idx == p)
        if not sel.any():
            continue
        kind = int(prims[p, 0])
        if kind == SPHERE:
            normal[sel] = (pts[sel] - prims[p, 1:4]) / prims[p, 4]
        elif kind == PLANE:
            normal[sel] = prims[p, 4:7]
        else:
            lo, hi = prims[p, 1:4], prims[p, 4:7]
            center = 0.5 * (lo + hi)
            half = np.maximum(0.5 * (hi - lo), 1e-12)
            rel = (pts[sel] - center) / half
            axis = np.argmax(np.abs(rel), axis=1)
            nrm = np.zeros_like(rel)
            nrm[np.arange(rel.shape[0]), axis] = np.sign(
                rel[np.arange(rel.shape[0]), axis]
            )
            normal[sel] = nrm
    flip = np.einsum("ij,ij->i", normal, rd) > 0.0
    normal[flip] *= -1.0
    return t, idx, normal


def occluded(prims: np.ndarray, ro: np.ndarray, rd: np.ndarray, t_max: np.ndarray) -> np.ndarray:
    """1 where any primitive blocks the segment (T_MIN, t_max) along each ray."""
    n = ro.shape[0]
    if prims.shape[0] == 0:
        return np.zeros(n, np.uint8)
    ts = _prim_ts(prims, ro, rd)
    blocked = (ts < t_max[None, :] - SHADOW_BIAS).any(axis=0)
    return blocked.astype(np.uint8)


# ---------------------------------------------------------------------------
# GGX shading


def _spec_terms(normals, wi, wo, rough, f0):
    """Channel-independent microfacet term D*Vis*F per (point, light dir).

    normals/wo: (N, 3); wi: (N, T, 3); rough/f0: (N,). Returns (N, T) along
    with the clamped cosines (N, T).
    """
    nl = np.einsum("nc,ntc->nt", normals, wi)
    nv = np.maximum(np.einsum("nc,nc->n", normals, wo), 0.0)[:, None]
    cos_i = np.maximum(nl, 0.0)
    h = wi + wo[:, None, :]
    h_norm = np.linalg.norm(h, axis=-1)
    h = h / np.maximum(h_norm, 1e-12)[..., None]
    nh = np.maximum(np.einsum("nc,ntc->nt", normals, h), 0.0)
    vh = np.maximum((h * wo[:, None, :]).sum(axis=-1), 0.0)
    a = np.maximum(rough, ROUGH_FLOOR) ** 2
    a2 = (a * a)[:, None]
    d = a2 / np.maximum(np.pi * (nh * nh * (a2 - 1.0) + 1.0) ** 2, 1e-12)
    # height-correlated Smith visibility, folded 1/(4 NL NV) included
    lv = cos_i * np.sqrt(np.maximum(nv * nv * (1.0 - a2) + a2, 0.0))
    ll = nv * np.sqrt(np.maximum(cos_i * cos_i * (1.0 - a2) + a2, 0.0))
    vis = 0.5 / np.maximum(lv + ll, 1e-12)
    f = f0[:, None] + (1.0 - f0[:, None]) * (1.0 - vh) ** 5
    spec = np.where((cos_i > 0.0) & (nv > 0.0), d * vis * f, 0.0)
    return spec, cos_i


def _shade_chunk(prims, pts, normals, wo, midx, env_dirs, env_omega):
    """Per-texel throughput (diffuse rgb part, spec scalar part), both (N, T)."""
    n = pts.shape[0]
    t = env_dirs.shape[0]
    wi = np.broadcast_to(env_dirs[None, :, :], (n, t, 3))
    spec, cos_i = _spec_terms(normals, wi, wo, prims[midx, 13], prims[midx, 14])
    origins = np.repeat(pts + SHADOW_BIAS * normals, t, axis=0)
    dirs = np.tile(env_dirs, (n, 1))
    vis = 1.0 - occluded(prims, origins, dirs, np.full(n * t, np.inf)).reshape(n, t)
    base = cos_i * vis * env_omega[None, :]
    sw = prims[midx, 15][:, None]
    return (1.0 - sw) / np.pi * base, sw * spec * base


def shade(prims, pts, normals, wo, midx, env_px, env_dirs, env_omega):
    """Direct lighting at each point by summing every environment texel."""
    n = pts.shape[0]
    out = np.zeros((n, 3))
    albedo = prims[midx, 10:13]
    chunk = max(1, 65536 // max(n, 1))
    for j0 in range(0, env_dirs.shape[0], chunk):
        j1 = min(j0 + chunk, env_dirs.shape[0])
        diff, spec = _shade_chunk(
            prims, pts, normals, wo, midx, env_dirs[j0:j1], env_omega[j0:j1]
        )
        rad = env_px[j0:j1]
        out += albedo * (diff @ rad) + spec @ rad
    return out


def transport_rows(prims, pts, normals, wo, midx, env_dirs, env_omega):
    """Per-point response to each env texel: (N, T, 3) float32.

    Entry [n, j, c] is the pixel's linear radiance under a one-hot env with
    value 1 at texel j in channel c.
    """
    n, t = pts.shape[0], env_dirs.shape[0]
    out = np.empty((n, t, 3), np.float32)
    albedo = prims[midx, 10:13]
    chunk = max(1, 65536 // max(n, 1))
    for j0 in range(0, t, chunk):
        j1 = min(j0 + chunk, t)
        diff, spec = _shade_chunk(
            prims, pts, normals, wo, midx, env_dirs[j0:j1], env_omega[j0:j1]
        )
        out[:, j0:j1, :] = (
            albedo[:, None, :] * diff[:, :, None] + spec[:, :, None]
        ).astype(np.float32)
    return out


def shade_area(prims, pts, normals, wo, midx, corner, e1, e2, radiance, nsub):
    """Direct lighting from a rectangular emitter via nsub x nsub midpoints."""
    n = pts.shape[0]
    area = np.linalg.norm(np.cross(e1, e2))
    light_n = np.cross(e1, e2) / max(area, 1e-12)
    cell = area / (nsub * nsub)
    out = np.zeros((n, 3))
    albedo = prims[midx, 10:13]
    sw = prims[midx, 15]
    for i in range(nsub):
        for j in range(nsub):
            s = corner + ((i + 0.5) / nsub) * e1 + ((j + 0.5) / nsub) * e2
            to_light = s[None, :] - pts
            dist = np.linalg.norm(to_light, axis=1)
            wi = to_light / np.maximum(dist, 1e-12)[:, None]
            spec, cos_i = _spec_terms(
                normals, wi[:, None, :], wo, prims[midx, 13], prims[midx, 14]
            )
            spec, cos_i = spec[:, 0], cos_i[:, 0]
            cos_l = np.abs(wi @ light_n)  # two-sided emitter
            vis = 1.0 - occluded(
                prims, pts + SHADOW_BIAS * normals, wi, dist
            ).astype(np.float64)
            geom = vis * cos_i * cos_l * cell / np.maximum(dist * dist, 1e-12)
            f_diff = (1.0 - sw)[:, None] / np.pi * albedo
            f_spec = (sw * spec)[:, None]
            out += (f_diff + f_spec) * radiance[None, :] * geom[:, None]
    return out


# ---------------------------------------------------------------------------
# Voxel volume rendering


def _ray_box(ro, rd, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / rd
        t1 = (lo - ro) * inv
        t2 = (hi - ro) * inv
    t0 = np.maximum(np.fmin(t1, t2).max(axis=1), 0.0)
    t1m = np.fmax(t1, t2).min(axis=1)
    return t0, t1m


def _trilinear_setup(pos, bbox_min, voxel, dims):
    """Corner indices (N,S,8) per axis and weights (N,S,8) for grid gathers."""
    g = (pos - bbox_min) / voxel - 0.5
    i0 = np.floor(g).astype(np.int64)
    f = g - i0
    idx = []
    wts = []
    for corner in range(8):
        cx, cy, cz = corner & 1, (corner >> 1) & 1, (corner >> 2) & 1
        ix = np.clip(i0[..., 0] + cx, 0, dims[0] - 1)
        iy = np.clip(i0[..., 1] + cy, 0, dims[1] - 1)
        iz = np.clip(i0[..., 2] + cz, 0, dims[2] - 1)
        w = (
            (f[..., 0] if cx else 1.0 - f[..., 0])
            * (f[..., 1] if cy else 1.0 - f[..., 1])
            * (f[..., 2] if cz else 1.0 - f[..., 2])
        )
        idx.append((ix, iy, iz))
        wts.append(w)
    return idx, wts


def _march_setup(density, bbox_min, voxel, ro, rd, n_samples):
    dims = density.shape
    hi = bbox_min + voxel * np.asarray(dims, np.float64)
    t0, t1 = _ray_box(ro, rd, bbox_min, hi)
    live = t1 > t0
    delta = np.where(live, (t1 - t0) / n_samples, 0.0)
    k = np.arange(n_samples)
    tk = t0[:, None] + (k[None, :] + 0.5) * delta[:, None]
    pos = ro[:, None, :] + tk[..., None] * rd[:, None, :]
    return live, delta, pos, dims


def volume_render(density, appearance, bbox_min, voxel, ro, rd, n_samples, bg):
    """Emission-absorption compositing with midpoint samples; returns (rgb, alpha)."""
    live, delta, pos, dims = _march_setup(density, bbox_min, voxel, ro, rd, n_samples)
    idx, wts = _trilinear_setup(pos, bbox_min, voxel, dims)
    sigma = np.zeros(pos.shape[:2])
    rgb = np.zeros(pos.shape[:2] + (3,))
    for (ix, iy, iz), w in zip(idx, wts):
        sigma += w * density[ix, iy, iz]
        rgb += w[..., None] * appearance[ix, iy, iz]
    alpha = np.minimum(1.0 - np.exp(-sigma * delta[:, None]), ALPHA_CAP)
    alpha *= live[:, None]
    trans = np.cumprod(1.0 - alpha, axis=1)
    t_before = np.concatenate([np.ones((alpha.shape[0], 1)), trans[:, :-1]], axis=1)
    weight = t_before * alpha
    out = np.einsum("ns,nsc->nc", weight, rgb) + trans[:, -1:] * bg[None, :]
    return out, 1.0 - trans[:, -1]


def volume_render_grad(
    density, appearance, bbox_min, voxel, ro, rd, n_samples, bg, d_rgb, d_alpha
):
    """Forward pass plus grid gradients for upstream d_rgb (N,3), d_alpha (N,)."""
    live, delta, pos, dims = _march_setup(density, bbox_min, voxel, ro, rd, n_samples)
    idx, wts = _trilinear_setup(pos, bbox_min, voxel, dims)
    sigma = np.zeros(pos.shape[:2])
    rgb = np.zeros(pos.shape[:2] + (3,))
    for (ix, iy, iz), w in zip(idx, wts):
        sigma += w * density[ix, iy, iz]
        rgb += w[..., None] * appearance[ix, iy, iz]
    alpha = np.minimum(1.0 - np.exp(-sigma * delta[:, None]), ALPHA_CAP)
    alpha *= live[:, None]
    trans = np.cumprod(1.0 - alpha, axis=1)
    t_before = np.concatenate([np.ones((alpha.shape[0], 1)), trans[:, :-1]], axis=1)
    weight = t_before * alpha
    out = np.einsum("ns,nsc->nc", weight, rgb) + trans[:, -1:] * bg[None, :]
    alpha_out = 1.0 - trans[:, -1]

    # suffix S_i = sum_{j>i} w_j c_j + T_N bg, evaluated with a reverse cumsum
    wc = weight[..., None] * rgb
    suffix = np.cumsum(wc[:, ::-1], axis=1)[:, ::-1]
    suffix = np.concatenate([suffix[:, 1:], np.zeros_like(suffix[:, :1])], axis=1)
    suffix = suffix + (trans[:, -1:, None] * bg[None, None, :])
    one_m = np.maximum(1.0 - alpha, 1e-10)
    d_out = d_rgb[:, None, :]
    d_alpha_i = (
        (d_out * t_before[..., None] * rgb).sum(-1)
        - (d_out * suffix).sum(-1) / one_m
        + (d_alpha[:, None] * trans[:, -1:]) / one_m
    )
    d_sigma = d_alpha_i * delta[:, None] * (1.0 - alpha) * live[:, None]
    d_c = d_rgb[:, None, :] * weight[..., None]

    g_density = np.zeros_like(density)
    g_appearance = np.zeros_like(appearance)
    for (ix, iy, iz), w in zip(idx, wts):
        np.add.at(g_density, (ix, iy, iz), w * d_sigma)
        np.add.at(g_appearance, (ix, iy, iz), w[..., None] * d_c)
    return out, alpha_out, g_density, g_appearance
