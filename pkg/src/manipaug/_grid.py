"""Compiled multilinear interpolation of a 2-D or 3-D sdf grid."""

from __future__ import annotations

import numpy as np
from numba import njit

_TOL = 1e-9


@njit(cache=True)
def _cell(u, n):
    out = u < -_TOL or u > n - 1 + _TOL
    if u < 0.0:
        u = 0.0
    elif u > n - 1:
        u = n - 1.0
    k = int(np.floor(u))
    if k > n - 2:
        k = n - 2
    return k, u - k, out


@njit(cache=True)
def interp2(sdf, origin, res, points, value, grad, outside):
    nx, ny = sdf.shape
    for p in range(points.shape[0]):
        i, fx, ox = _cell((points[p, 0] - origin[0]) / res, nx)
        j, fy, oy = _cell((points[p, 1] - origin[1]) / res, ny)
        outside[p] = ox or oy
        v00 = sdf[i, j]
        v10 = sdf[i + 1, j]
        v01 = sdf[i, j + 1]
        v11 = sdf[i + 1, j + 1]
        value[p] = ((1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v10
                    + (1 - fx) * fy * v01 + fx * fy * v11)
        grad[p, 0] = ((1 - fy) * (v10 - v00) + fy * (v11 - v01)) / res
        grad[p, 1] = ((1 - fx) * (v01 - v00) + fx * (v11 - v10)) / res


@njit(cache=True)
def interp3(sdf, origin, res, points, value, grad, outside):
    nx, ny, nz = sdf.shape
    for p in range(points.shape[0]):
        i, fx, ox = _cell((points[p, 0] - origin[0]) / res, nx)
        j, fy, oy = _cell((points[p, 1] - origin[1]) / res, ny)
        k, fz, oz = _cell((points[p, 2] - origin[2]) / res, nz)
        outside[p] = ox or oy or oz
        v = 0.0
        gx = 0.0
        gy = 0.0
        gz = 0.0
        for bx in range(2):
            wx = fx if bx else 1.0 - fx
            sx = 1.0 if bx else -1.0
            for by in range(2):
                wy = fy if by else 1.0 - fy
                sy = 1.0 if by else -1.0
                for bz in range(2):
                    wz = fz if bz else 1.0 - fz
                    sz = 1.0 if bz else -1.0
                    c = sdf[i + bx, j + by, k + bz]
                    v += wx * wy * wz * c
                    gx += sx * wy * wz * c
                    gy += wx * sy * wz * c
                    gz += wx * wy * sz * c
        value[p] = v
        grad[p, 0] = gx / res
        grad[p, 1] = gy / res
        grad[p, 2] = gz / res


def interpolate(sdf, origin, res, points):
    """``(value, grad, outside)`` for an ``(n, dim)`` float array."""
    n, dim = points.shape
    value = np.empty(n)
    grad = np.empty((n, dim))
    outside = np.empty(n, dtype=np.bool_)
    kernel = interp2 if dim == 2 else interp3
    kernel(sdf, origin, float(res), points, value, grad, outside)
    return value, grad, outside


@njit(cache=True)
def assemble(aug, rel, dR, sdf_aug, grad, offsets, clear_orig, overshoot, w_bbox, w_occ, w_dmd,
             lo, hi, min_index, min_sdf, out_grad):
    """Point terms of the projection objective, pulled back onto T.

    Fills ``out_grad`` (translation then angles) and returns
    ``(bbox, occ_residual, dmd, mismatch_count)``. Mirrors ``bbox_loss``,
    ``occ_gradient`` and ``dmd_value`` in ``objectives``.
    """
    n, k = aug.shape
    n_ang = dR.shape[0]
    for a in range(out_grad.shape[0]):
        out_grad[a] = 0.0
    bbox = 0.0
    residual = 0.0
    mismatch = 0
    g = np.zeros(k)
    for p in range(n):
        for c in range(k):
            g[c] = 0.0
        for c in range(k):
            if aug[p, c] > hi[c]:
                bbox += aug[p, c] - hi[c]
                g[c] += w_bbox
            elif aug[p, c] < lo[c]:
                bbox += lo[c] - aug[p, c]
                g[c] -= w_bbox
        clear = sdf_aug[p] - offsets[p]
        if (clear_orig[p] <= 0.0) != (clear <= 0.0):
            mismatch += 1
            residual += abs(clear)
            scale = clear + overshoot if clear > 0.0 else clear - overshoot
            for c in range(k):
                g[c] += w_occ * scale * grad[p, c]
        if p == min_index:
            delta = min_sdf - sdf_aug[p]
            for c in range(k):
                g[c] += w_dmd * (-2.0 * delta) * grad[p, c]
        for c in range(k):
            out_grad[c] += g[c]
        for a in range(n_ang):
            acc = 0.0
            for i in range(k):
                for j in range(k):
                    acc += g[i] * dR[a, i, j] * rel[p, j]
            out_grad[k + a] += acc
    delta = min_sdf - sdf_aug[min_index]
    return bbox, residual, delta * delta, mismatch
