"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

Set RAYPICK_DISABLE_NUMBA=1 to force the numpy path (also used when numba
is not importable). benchmarks/bench_kernels.py times both.
"""

import os

import numpy as np

USE_NUMBA = os.environ.get("RAYPICK_DISABLE_NUMBA", "").strip().lower() not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False


def _ray_march_py(ox, oy, angles, cx, cy, cr, skip, max_dist):
    """Nearest circle hit per ray. Returns (dist, hit_index); miss -> (max_dist, -1)."""
    n_rays = angles.shape[0]
    dist = np.full(n_rays, max_dist, dtype=np.float64)
    idx = np.full(n_rays, -1, dtype=np.int64)
    dirx = np.cos(angles)
    diry = np.sin(angles)
    relx = cx - ox
    rely = cy - oy
    rr = cr * cr
    for j in range(cx.shape[0]):
        if j == skip:
            continue
        b = dirx * relx[j] + diry * rely[j]
        c = relx[j] * relx[j] + rely[j] * rely[j] - rr[j]
        disc = b * b - c
        ok = disc >= 0.0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t = np.where(c <= 0.0, b + sq, b - sq)  # origin inside circle: exit point
        hit = ok & (t > 1e-9) & (t < dist)
        dist = np.where(hit, t, dist)
        idx = np.where(hit, j, idx)
    return dist, idx


def _col2im_1d_py(gcols, lp, stride):
    """Scatter-add conv1d column gradients back to (B, C, Lp)."""
    b, c, lo, k = gcols.shape
    out = np.zeros((b, c, lp), dtype=gcols.dtype)
    pos = (np.arange(lo) * stride)[:, None] + np.arange(k)[None, :]
    np.add.at(out, (slice(None), slice(None), pos), gcols)
    return out


if USE_NUMBA:

    @njit(cache=True)
    def _ray_march_nb(ox, oy, angles, cx, cy, cr, skip, max_dist):
        n_rays = angles.shape[0]
        n_c = cx.shape[0]
        dist = np.full(n_rays, max_dist, dtype=np.float64)
        idx = np.full(n_rays, -1, dtype=np.int64)
        for i in range(n_rays):
            dx = np.cos(angles[i])
            dy = np.sin(angles[i])
            best = max_dist
            best_j = -1
            for j in range(n_c):
                if j == skip:
                    continue
                rx = cx[j] - ox
                ry = cy[j] - oy
                b = dx * rx + dy * ry
                c = rx * rx + ry * ry - cr[j] * cr[j]
                disc = b * b - c
                if disc < 0.0:
                    continue
                sq = np.sqrt(disc)
                t = b + sq if c <= 0.0 else b - sq
                if 1e-9 < t < best:
                    best = t
                    best_j = j
            dist[i] = best
            idx[i] = best_j
        return dist, idx

    @njit(cache=True)
    def _col2im_1d_nb(gcols, lp, stride):
        b, c, lo, k = gcols.shape
        out = np.zeros((b, c, lp), dtype=gcols.dtype)
        for bi in range(b):
            for ci in range(c):
                for li in range(lo):
                    base = li * stride
                    for ki in range(k):
                        out[bi, ci, base + ki] += gcols[bi, ci, li, ki]
        return out

    def ray_march(ox, oy, angles, cx, cy, cr, skip=-1, max_dist=4.0):
        return _ray_march_nb(float(ox), float(oy), np.ascontiguousarray(angles, dtype=np.float64),
                             np.ascontiguousarray(cx, dtype=np.float64),
                             np.ascontiguousarray(cy, dtype=np.float64),
                             np.ascontiguousarray(cr, dtype=np.float64), int(skip), float(max_dist))

    def col2im_1d(gcols, lp, stride):
        return _col2im_1d_nb(gcols, lp, stride)

else:

    def ray_march(ox, oy, angles, cx, cy, cr, skip=-1, max_dist=4.0):
        return _ray_march_py(float(ox), float(oy), np.asarray(angles, dtype=np.float64),
                             np.asarray(cx, dtype=np.float64), np.asarray(cy, dtype=np.float64),
                             np.asarray(cr, dtype=np.float64), int(skip), float(max_dist))

    def col2im_1d(gcols, lp, stride):
        return _col2im_1d_py(gcols, lp, stride)
