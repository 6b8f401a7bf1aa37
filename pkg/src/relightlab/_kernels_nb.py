"""Numba-compiled kernels mirroring `_kernels_np` signature for signature.

Outer loops over shading points and rays use prange; every iteration owns
its output slice, so results do not depend on the thread schedule. The
gradient kernel accumulates into shared grids and therefore stays serial.
"""

import numpy as np
from numba import njit, prange

T_MIN = 1e-5
SHADOW_BIAS = 1e-4
ALPHA_CAP = 1.0 - 1e-7
ROUGH_FLOOR = 0.05

SPHERE, PLANE, BOX = 0, 1, 2


@njit(cache=True)
def _hit_one(prims, p, ox, oy, oz, dx, dy, dz):
    """Hit distance of one ray against primitive p; inf on miss."""
    kind = int(prims[p, 0])
    if kind == SPHERE:
        cx, cy, cz, r = prims[p, 1], prims[p, 2], prims[p, 3], prims[p, 4]
        qx, qy, qz = ox - cx, oy - cy, oz - cz
        b = qx * dx + qy * dy + qz * dz
        disc = b * b - (qx * qx + qy * qy + qz * qz - r * r)
        if disc < 0.0:
            return np.inf
        root = np.sqrt(disc)
        t = -b - root
        if t <= T_MIN:
            t = -b + root
        if t <= T_MIN:
            return np.inf
        return t
    if kind == PLANE:
        nx, ny, nz = prims[p, 4], prims[p, 5], prims[p, 6]
        denom = dx * nx + dy * ny + dz * nz
        if abs(denom) <= 1e-12:
            return np.inf
        t = ((prims[p, 1] - ox) * nx + (prims[p, 2] - oy) * ny + (prims[p, 3] - oz) * nz) / denom
        if t <= T_MIN:
            return np.inf
        return t
    t_near = -np.inf
    t_far = np.inf
    o = (ox, oy, oz)
    d = (dx, dy, dz)
    for axis in range(3):
        lo = prims[p, 1 + axis]
        hi = prims[p, 4 + axis]
        if abs(d[axis]) <= 1e-12:
            if o[axis] < lo or o[axis] > hi:
                return np.inf
        else:
            ta = (lo - o[axis]) / d[axis]
            tb = (hi - o[axis]) / d[axis]
            if ta > tb:
                ta, tb = tb, ta
            if ta > t_near:
                t_near = ta
            if tb < t_far:
                t_far = tb
    if t_near > t_far or t_far <= T_MIN:
        return np.inf
    if t_near > T_MIN:
        return t_near
    return t_far


@njit(cache=True)
def _box_normal(prims, p, px, py, pz):
    cx = 0.5 * (prims[p, 1] + prims[p, 4])
    cy = 0.5 * (prims[p, 2] + prims[p, 5])
    cz = 0.5 * (prims[p, 3] + prims[p, 6])
    hx = max(0.5 * (prims[p, 4] - prims[p, 1]), 1e-12)
    hy = max(0.5 * (prims[p, 5] - prims[p, 2]), 1e-12)
    hz = max(0.5 * (prims[p, 6] - prims[p, 3]), 1e-12)
    rx = (px - cx) / hx
    ry = (py - cy) / hy
    rz = (pz - cz) / hz
    ax, ay, az = abs(rx), abs(ry), abs(rz)
    if ax >= ay and ax >= az:
        return (1.0 if rx > 0 else -1.0), 0.0, 0.0
    if ay >= az:
        return 0.0, (1.0 if ry > 0 else -1.0), 0.0
    return 0.0, 0.0, (1.0 if rz > 0 else -1.0)


@njit(cache=True, parallel=True)
def intersect(prims, ro, rd):
    n = ro.shape[0]
    t_out = np.full(n, np.inf)
    idx_out = np.full(n, -1, np.int64)
    n_out = np.zeros((n, 3))
    for i in prange(n):
        best = np.inf
        best_p = -1
        for p in range(prims.shape[0]):
            t = _hit_one(prims, p, ro[i, 0], ro[i, 1], ro[i, 2], rd[i, 0], rd[i, 1], rd[i, 2])
            if t < best:
                best = t
                best_p = p
        t_out[i] = best
        idx_out[i] = best_p
        if best_p >= 0:
            px = ro[i, 0] + best * rd[i, 0]
            py = ro[i, 1] + best * rd[i, 1]
            pz = ro[i, 2] + best * rd[i, 2]
            kind = int(prims[best_p, 0])
            if kind == SPHERE:
                r = prims[best_p, 4]
                nx = (px - prims[best_p, 1]) / r
                ny = (py - prims[best_p, 2]) / r
                nz = (pz - prims[best_p, 3]) / r
            elif kind == PLANE:
                nx, ny, nz = prims[best_p, 4], prims[best_p, 5], prims[best_p, 6]
            else:
                nx, ny, nz = _box_normal(prims, best_p, px, py, pz)
            if nx * rd[i, 0] + ny * rd[i, 1] + nz * rd[i, 2] > 0.0:
                nx, ny, nz = -nx, -ny, -nz
            n_out[i, 0] = nx
            n_out[i, 1] = ny
            n_out[i, 2] = nz
    return t_out, idx_out, n_out


@njit(cache=True)
def _blocked(prims, ox, oy, oz, dx, dy, dz, t_max):
    for p in range(prims.shape[0]):
        t = _hit_one(prims, p, ox, oy, oz, dx, dy, dz)
        if t < t_max - SHADOW_BIAS:
            return True
    return False


@njit(cache=True, parallel=True)
def occluded(prims, ro, rd, t_max):
    n = ro.shape[0]
    out = np.zeros(n, np.uint8)
    for i in prange(n):
        if _blocked(prims, ro[i, 0], ro[i, 1], ro[i, 2], rd[i, 0], rd[i, 1], rd[i, 2], t_max[i]):
            out[i] = 1
    return out


@njit(cache=True)
def _brdf_terms(nx, ny, nz, wix, wiy, wiz, wox, woy, woz, rough, f0):
    """Returns (cos_i, channel-independent specular term) for one direction."""
    cos_i = nx * wix + ny * wiy + nz * wiz
    if cos_i <= 0.0:
        return 0.0, 0.0
    nv = nx * wox + ny * woy + nz * woz
    if nv <= 0.0:
        return cos_i, 0.0
    hx, hy, hz = wix + wox, wiy + woy, wiz + woz
    hn = np.sqrt(hx * hx + hy * hy + hz * hz)
    if hn < 1e-12:
        return cos_i, 0.0
    hx, hy, hz = hx / hn, hy / hn, hz / hn
    nh = max(nx * hx + ny * hy + nz * hz, 0.0)
    vh = max(wox * hx + woy * hy + woz * hz, 0.0)
    a = max(rough, ROUGH_FLOOR) ** 2
    a2 = a * a
    denom = nh * nh * (a2 - 1.0) + 1.0
    d = a2 / max(np.pi * denom * denom, 1e-12)
    lv = cos_i * np.sqrt(max(nv * nv * (1.0 - a2) + a2, 0.0))
    ll = nv * np.sqrt(max(cos_i * cos_i * (1.0 - a2) + a2, 0.0))
    vis = 0.5 / max(lv + ll, 1e-12)
    f = f0 + (1.0 - f0) * (1.0 - vh) ** 5
    return cos_i, d * vis * f


@njit(cache=True, parallel=True)
def shade(prims, pts, normals, wo, midx, env_px, env_dirs, env_omega):
    n = pts.shape[0]
    t = env_dirs.shape[0]
    out = np.zeros((n, 3))
    for i in prange(n):
        m = midx[i]
        ar, ag, ab = prims[m, 10], prims[m, 11], prims[m, 12]
        rough, f0, sw = prims[m, 13], prims[m, 14], prims[m, 15]
        nx, ny, nz = normals[i, 0], normals[i, 1], normals[i, 2]
        ox = pts[i, 0] + SHADOW_BIAS * nx
        oy = pts[i, 1] + SHADOW_BIAS * ny
        oz = pts[i, 2] + SHADOW_BIAS * nz
        acc_r = acc_g = acc_b = 0.0
        for j in range(t):
            wix, wiy, wiz = env_dirs[j, 0], env_dirs[j, 1], env_dirs[j, 2]
            cos_i, spec = _brdf_terms(
                nx, ny, nz, wix, wiy, wiz, wo[i, 0], wo[i, 1], wo[i, 2], rough, f0
            )
            if cos_i <= 0.0:
                continue
            if _blocked(prims, ox, oy, oz, wix, wiy, wiz, np.inf):
                continue
            base = cos_i * env_omega[j]
            diff = (1.0 - sw) / np.pi * base
            sterm = sw * spec * base
            acc_r += (diff * ar + sterm) * env_px[j, 0]
            acc_g += (diff * ag + sterm) * env_px[j, 1]
            acc_b += (diff * ab + sterm) * env_px[j, 2]
        out[i, 0] = acc_r
        out[i, 1] = acc_g
        out[i, 2] = acc_b
    return out


@njit(cache=True, parallel=True)
def transport_rows(prims, pts, normals, wo, midx, env_dirs, env_omega):
    n = pts.shape[0]
    t = env_dirs.shape[0]
    out = np.zeros((n, t, 3), np.float32)
    for i in prange(n):
        m = midx[i]
        ar, ag, ab = prims[m, 10], prims[m, 11], prims[m, 12]
        rough, f0, sw = prims[m, 13], prims[m, 14], prims[m, 15]
        nx, ny, nz = normals[i, 0], normals[i, 1], normals[i, 2]
        ox = pts[i, 0] + SHADOW_BIAS * nx
        oy = pts[i, 1] + SHADOW_BIAS * ny
        oz = pts[i, 2] + SHADOW_BIAS * nz
        for j in range(t):
            wix, wiy, wiz = env_dirs[j, 0], env_dirs[j, 1], env_dirs[j, 2]
            cos_i, spec = _brdf_terms(
                nx, ny, nz, wix, wiy, wiz, wo[i, 0], wo[i, 1], wo[i, 2], rough, f0
            )
            if cos_i <= 0.0:
                continue
            if _blocked(prims, ox, oy, oz, wix, wiy, wiz, np.inf):
                continue
            base = cos_i * env_omega[j]
            diff = (1.0 - sw) / np.pi * base
            sterm = sw * spec * base
            out[i, j, 0] = np.float32(diff * ar + sterm)
            out[i, j, 1] = np.float32(diff * ag + sterm)
            out[i, j, 2] = np.float32(diff * ab + sterm)
    return out


@njit(cache=True, parallel=True)
def shade_area(prims, pts, normals, wo, midx, corner, e1, e2, radiance, nsub):
    n = pts.shape[0]
    out = np.zeros((n, 3))
    lnx = e1[1] * e2[2] - e1[2] * e2[1]
    lny = e1[2] * e2[0] - e1[0] * e2[2]
    lnz = e1[0] * e2[1] - e1[1] * e2[0]
    area = np.sqrt(lnx * lnx + lny * lny + lnz * lnz)
    if area < 1e-12:
        return out
    lnx, lny, lnz = lnx / area, lny / area, lnz / area
    cell = area / (nsub * nsub)
    for i in prange(n):
        m = midx[i]
        ar, ag, ab = prims[m, 10], prims[m, 11], prims[m, 12]
        rough, f0, sw = prims[m, 13], prims[m, 14], prims[m, 15]
        nx, ny, nz = normals[i, 0], normals[i, 1], normals[i, 2]
        ox = pts[i, 0] + SHADOW_BIAS * nx
        oy = pts[i, 1] + SHADOW_BIAS * ny
        oz = pts[i, 2] + SHADOW_BIAS * nz
        acc_r = acc_g = acc_b = 0.0
        for si in range(nsub):
            for sj in range(nsub):
                sx = corner[0] + ((si + 0.5) / nsub) * e1[0] + ((sj + 0.5) / nsub) * e2[0]
                sy = corner[1] + ((si + 0.5) / nsub) * e1[1] + ((sj + 0.5) / nsub) * e2[1]
                sz = corner[2] + ((si + 0.5) / nsub) * e1[2] + ((sj + 0.5) / nsub) * e2[2]
                tx, ty, tz = sx - pts[i, 0], sy - pts[i, 1], sz - pts[i, 2]
                dist = np.sqrt(tx * tx + ty * ty + tz * tz)
                if dist < 1e-9:
                    continue
                wix, wiy, wiz = tx / dist, ty / dist, tz / dist
                cos_i, spec = _brdf_terms(
                    nx, ny, nz, wix, wiy, wiz, wo[i, 0], wo[i, 1], wo[i, 2], rough, f0
                )
                if cos_i <= 0.0:
                    continue
                cos_l = abs(wix * lnx + wiy * lny + wiz * lnz)
                if cos_l <= 0.0:
                    continue
                if _blocked(prims, ox, oy, oz, wix, wiy, wiz, dist):
                    continue
                geom = cos_i * cos_l * cell / max(dist * dist, 1e-12)
                diff = (1.0 - sw) / np.pi * geom
                sterm = sw * spec * geom
                acc_r += (diff * ar + sterm) * radiance[0]
                acc_g += (diff * ag + sterm) * radiance[1]
                acc_b += (diff * ab + sterm) * radiance[2]
        out[i, 0] = acc_r
        out[i, 1] = acc_g
        out[i, 2] = acc_b
    return out


# ---------------------------------------------------------------------------
# Voxel volume rendering


@njit(cache=True)
def _ray_box_one(ox, oy, oz, dx, dy, dz, lo, hi):
    t0 = 0.0
    t1 = np.inf
    o = (ox, oy, oz)
    d = (dx, dy, dz)
    for axis in range(3):
        if abs(d[axis]) <= 1e-12:
            if o[axis] < lo[axis] or o[axis] > hi[axis]:
                return 0.0, -1.0
        else:
            ta = (lo[axis] - o[axis]) / d[axis]
            tb = (hi[axis] - o[axis]) / d[axis]
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
    if t1 <= t0:
        return 0.0, -1.0
    return t0, t1


@njit(cache=True, inline="always")
def _tri_cell(px, py, pz, bx, by, bz, voxel, d0, d1, d2):
    gx = (px - bx) / voxel - 0.5
    gy = (py - by) / voxel - 0.5
    gz = (pz - bz) / voxel - 0.5
    ix = int(np.floor(gx))
    iy = int(np.floor(gy))
    iz = int(np.floor(gz))
    fx = gx - ix
    fy = gy - iy
    fz = gz - iz
    x0 = min(max(ix, 0), d0 - 1)
    x1 = min(max(ix + 1, 0), d0 - 1)
    y0 = min(max(iy, 0), d1 - 1)
    y1 = min(max(iy + 1, 0), d1 - 1)
    z0 = min(max(iz, 0), d2 - 1)
    z1 = min(max(iz + 1, 0), d2 - 1)
    return x0, x1, y0, y1, z0, z1, fx, fy, fz


@njit(cache=True, parallel=True)
def volume_render(density, appearance, bbox_min, voxel, ro, rd, n_samples, bg):
    n = ro.shape[0]
    d0, d1, d2 = density.shape
    hi0 = bbox_min[0] + voxel * d0
    hi1 = bbox_min[1] + voxel * d1
    hi2 = bbox_min[2] + voxel * d2
    lo = (bbox_min[0], bbox_min[1], bbox_min[2])
    hi = (hi0, hi1, hi2)
    rgb = np.zeros((n, 3))
    alpha_out = np.zeros(n)
    for i in prange(n):
        t0, t1 = _ray_box_one(ro[i, 0], ro[i, 1], ro[i, 2], rd[i, 0], rd[i, 1], rd[i, 2], lo, hi)
        if t1 < 0.0:
            rgb[i, 0], rgb[i, 1], rgb[i, 2] = bg[0], bg[1], bg[2]
            continue
        delta = (t1 - t0) / n_samples
        trans = 1.0
        cr = cg = cb = 0.0
        for k in range(n_samples):
            tk = t0 + (k + 0.5) * delta
            px = ro[i, 0] + tk * rd[i, 0]
            py = ro[i, 1] + tk * rd[i, 1]
            pz = ro[i, 2] + tk * rd[i, 2]
            x0, x1, y0, y1, z0, z1, fx, fy, fz = _tri_cell(
                px, py, pz, bbox_min[0], bbox_min[1], bbox_min[2], voxel, d0, d1, d2
            )
            sigma = 0.0
            sr = sg = sb = 0.0
            for c in range(8):
                cx = x1 if (c & 1) else x0
                cy = y1 if (c & 2) else y0
                cz = z1 if (c & 4) else z0
                w = (
                    (fx if (c & 1) else 1.0 - fx)
                    * (fy if (c & 2) else 1.0 - fy)
                    * (fz if (c & 4) else 1.0 - fz)
                )
                sigma += w * density[cx, cy, cz]
                sr += w * appearance[cx, cy, cz, 0]
                sg += w * appearance[cx, cy, cz, 1]
                sb += w * appearance[cx, cy, cz, 2]
            a = 1.0 - np.exp(-sigma * delta)
            if a > ALPHA_CAP:
                a = ALPHA_CAP
            w_k = trans * a
            cr += w_k * sr
            cg += w_k * sg
            cb += w_k * sb
            trans *= 1.0 - a
        rgb[i, 0] = cr + trans * bg[0]
        rgb[i, 1] = cg + trans * bg[1]
        rgb[i, 2] = cb + trans * bg[2]
        alpha_out[i] = 1.0 - trans
    return rgb, alpha_out


@njit(cache=True)
def volume_render_grad(
    density, appearance, bbox_min, voxel, ro, rd, n_samples, bg, d_rgb, d_alpha
):
    """Forward plus grid gradients; serial because grads share accumulators."""
    n = ro.shape[0]
    d0, d1, d2 = density.shape
    lo = (bbox_min[0], bbox_min[1], bbox_min[2])
    hi = (bbox_min[0] + voxel * d0, bbox_min[1] + voxel * d1, bbox_min[2] + voxel * d2)
    rgb = np.zeros((n, 3))
    alpha_out = np.zeros(n)
    g_density = np.zeros_like(density)
    g_appearance = np.zeros_like(appearance)
    alphas = np.empty(n_samples)
    colors = np.empty((n_samples, 3))
    t_befores = np.empty(n_samples)
    for i in range(n):
        t0, t1 = _ray_box_one(ro[i, 0], ro[i, 1], ro[i, 2], rd[i, 0], rd[i, 1], rd[i, 2], lo, hi)
        if t1 < 0.0:
            rgb[i, 0], rgb[i, 1], rgb[i, 2] = bg[0], bg[1], bg[2]
            continue
        delta = (t1 - t0) / n_samples
        trans = 1.0
        cr = cg = cb = 0.0
        for k in range(n_samples):
            tk = t0 + (k + 0.5) * delta
            px = ro[i, 0] + tk * rd[i, 0]
            py = ro[i, 1] + tk * rd[i, 1]
            pz = ro[i, 2] + tk * rd[i, 2]
            x0, x1, y0, y1, z0, z1, fx, fy, fz = _tri_cell(
                px, py, pz, bbox_min[0], bbox_min[1], bbox_min[2], voxel, d0, d1, d2
            )
            sigma = 0.0
            sr = sg = sb = 0.0
            for c in range(8):
                cx = x1 if (c & 1) else x0
                cy = y1 if (c & 2) else y0
                cz = z1 if (c & 4) else z0
                w = (
                    (fx if (c & 1) else 1.0 - fx)
                    * (fy if (c & 2) else 1.0 - fy)
                    * (fz if (c & 4) else 1.0 - fz)
                )
                sigma += w * density[cx, cy, cz]
                sr += w * appearance[cx, cy, cz, 0]
                sg += w * appearance[cx, cy, cz, 1]
                sb += w * appearance[cx, cy, cz, 2]
            a = 1.0 - np.exp(-sigma * delta)
            if a > ALPHA_CAP:
                a = ALPHA_CAP
            alphas[k] = a
            colors[k, 0] = sr
            colors[k, 1] = sg
            colors[k, 2] = sb
            t_befores[k] = trans
            w_k = trans * a
            cr += w_k * sr
            cg += w_k * sg
            cb += w_k * sb
            trans *= 1.0 - a
        rgb[i, 0] = cr + trans * bg[0]
        rgb[i, 1] = cg + trans * bg[1]
        rgb[i, 2] = cb + trans * bg[2]
        alpha_out[i] = 1.0 - trans
        # reverse sweep: suffix holds sum_{j>k} w_j c_j + T_N * bg
        suf_r = trans * bg[0]
        suf_g = trans * bg[1]
        suf_b = trans * bg[2]
        gr, gg, gb = d_rgb[i, 0], d_rgb[i, 1], d_rgb[i, 2]
        ga = d_alpha[i]
        for k in range(n_samples - 1, -1, -1):
            a = alphas[k]
            tb = t_befores[k]
            one_m = max(1.0 - a, 1e-10)
            d_a = (
                tb * (gr * colors[k, 0] + gg * colors[k, 1] + gb * colors[k, 2])
                - (gr * suf_r + gg * suf_g + gb * suf_b) / one_m
                + ga * trans / one_m
            )
            d_sig = d_a * delta * (1.0 - a)
            w_k = tb * a
            dc_r = gr * w_k
            dc_g = gg * w_k
            dc_b = gb * w_k
            tk = t0 + (k + 0.5) * delta
            px = ro[i, 0] + tk * rd[i, 0]
            py = ro[i, 1] + tk * rd[i, 1]
            pz = ro[i, 2] + tk * rd[i, 2]
            x0, x1, y0, y1, z0, z1, fx, fy, fz = _tri_cell(
                px, py, pz, bbox_min[0], bbox_min[1], bbox_min[2], voxel, d0, d1, d2
            )
            for c in range(8):
                cx = x1 if (c & 1) else x0
                cy = y1 if (c & 2) else y0
                cz = z1 if (c & 4) else z0
                w = (
                    (fx if (c & 1) else 1.0 - fx)
                    * (fy if (c & 2) else 1.0 - fy)
                    * (fz if (c & 4) else 1.0 - fz)
                )
                g_density[cx, cy, cz] += w * d_sig
                g_appearance[cx, cy, cz, 0] += w * dc_r
                g_appearance[cx, cy, cz, 1] += w * dc_g
                g_appearance[cx, cy, cz, 2] += w * dc_b
            suf_r += w_k * colors[k, 0]
            suf_g += w_k * colors[k, 1]
            suf_b += w_k * colors[k, 2]
    return rgb, alpha_out, g_density, g_appearance
