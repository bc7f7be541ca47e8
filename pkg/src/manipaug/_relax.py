"""Compiled inner loops for the rope relaxation.

Segment lengths are enforced with a linearized simultaneous projection: all
length constraints of the chain are solved together through a tridiagonal
system (Thomas algorithm), a couple of Newton steps per call. Obstacles are
handled by projecting interior nodes out along the interpolated sdf gradient.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _sdf_and_grad(sdf, origin, res, x, y, z):
    p = (x, y, z)
    i = [0, 0, 0]
    f = [0.0, 0.0, 0.0]
    for a in range(3):
        n = sdf.shape[a]
        u = (p[a] - origin[a]) / res
        if u < 0.0:
            u = 0.0
        elif u > n - 1:
            u = n - 1.0
        k = int(np.floor(u))
        if k > n - 2:
            k = n - 2
        i[a] = k
        f[a] = u - k
    value = 0.0
    gx = 0.0
    gy = 0.0
    gz = 0.0
    for bx in range(2):
        wx = f[0] if bx else 1.0 - f[0]
        dx = 1.0 if bx else -1.0
        for by in range(2):
            wy = f[1] if by else 1.0 - f[1]
            dy = 1.0 if by else -1.0
            for bz in range(2):
                wz = f[2] if bz else 1.0 - f[2]
                dz = 1.0 if bz else -1.0
                v = sdf[i[0] + bx, i[1] + by, i[2] + bz]
                value += wx * wy * wz * v
                gx += dx * wy * wz * v
                gy += wx * dy * wz * v
                gz += wx * wy * dz * v
    return value, gx / res, gy / res, gz / res


@njit(cache=True)
def project_lengths(nodes, rest, newton_steps):
    """Simultaneous projection of all segment lengths; endpoints stay pinned."""
    n = nodes.shape[0]
    m = n - 1
    d = np.empty((m, 3))
    c = np.empty(m)
    diag = np.empty(m)
    off = np.empty(m)
    rhs = np.empty(m)
    lam = np.empty(m)
    for _ in range(newton_steps):
        for i in range(m):
            dx = nodes[i + 1, 0] - nodes[i, 0]
            dy = nodes[i + 1, 1] - nodes[i, 1]
            dz = nodes[i + 1, 2] - nodes[i, 2]
            length = np.sqrt(dx * dx + dy * dy + dz * dz)
            if length < 1e-12:
                length = 1e-12
            d[i, 0] = dx / length
            d[i, 1] = dy / length
            d[i, 2] = dz / length
            c[i] = length - rest
        for i in range(m):
            wi = 0.0 if i == 0 else 1.0
            wj = 0.0 if i + 1 == n - 1 else 1.0
            diag[i] = wi + wj
            if i + 1 < m:
                wshared = 0.0 if i + 1 == n - 1 else 1.0
                off[i] = -wshared * (d[i, 0] * d[i + 1, 0] + d[i, 1] * d[i + 1, 1] + d[i, 2] * d[i + 1, 2])
            rhs[i] = -c[i]
        # Thomas algorithm on the symmetric tridiagonal system
        for i in range(1, m):
            if diag[i - 1] == 0.0:
                continue
            factor = off[i - 1] / diag[i - 1]
            diag[i] -= factor * off[i - 1]
            rhs[i] -= factor * rhs[i - 1]
        for i in range(m - 1, -1, -1):
            acc = rhs[i]
            if i + 1 < m:
                acc -= off[i] * lam[i + 1]
            lam[i] = acc / diag[i] if diag[i] != 0.0 else 0.0
        for k in range(1, n - 1):
            for a in range(3):
                nodes[k, a] += d[k - 1, a] * lam[k - 1] - d[k, a] * lam[k]


@njit(cache=True)
def project_obstacles(nodes, sdf, origin, res):
    for i in range(1, nodes.shape[0] - 1):
        v, gx, gy, gz = _sdf_and_grad(sdf, origin, res, nodes[i, 0], nodes[i, 1], nodes[i, 2])
        if v < 0.0:
            gn = np.sqrt(gx * gx + gy * gy + gz * gz)
            if gn > 1e-12:
                nodes[i, 0] -= v * gx / gn
                nodes[i, 1] -= v * gy / gn
                nodes[i, 2] -= v * gz / gn


@njit(cache=True)
def max_length_error(nodes, rest):
    worst = 0.0
    for i in range(nodes.shape[0] - 1):
        dx = nodes[i + 1, 0] - nodes[i, 0]
        dy = nodes[i + 1, 1] - nodes[i, 1]
        dz = nodes[i + 1, 2] - nodes[i, 2]
        e = abs(np.sqrt(dx * dx + dy * dy + dz * dz) - rest) / rest
        if e > worst:
            worst = e
    return worst


@njit(cache=True)
def min_sdf(nodes, sdf, origin, res):
    worst = np.inf
    for i in range(1, nodes.shape[0] - 1):
        v, _, _, _ = _sdf_and_grad(sdf, origin, res, nodes[i, 0], nodes[i, 1], nodes[i, 2])
        if v < worst:
            worst = v
    return worst


@njit(cache=True)
def relax(nodes, rest, bias, rounds, max_iters, tol, sdf, origin, res, has_field,
          length_tol, sdf_tol, max_tighten):
    """Relax a chain with pinned endpoints under a per-iteration gravity bias.

    Each iteration lowers the interior nodes by ``bias`` and then alternates
    length and obstacle projection ``rounds`` times; it stops once no node
    moved more than ``tol`` and both constraints hold to ``length_tol`` /
    ``sdf_tol``. Returns ``(iterations, converged)`` and modifies ``nodes`` in
    place.
    """
    n = nodes.shape[0]
    prev = nodes.copy()
    step = np.zeros_like(nodes)
    last_step = np.zeros_like(nodes)
    min_bias = bias / 64.0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        prev[:, :] = nodes
        for i in range(1, n - 1):
            nodes[i, 2] -= bias
        for _ in range(rounds):
            project_lengths(nodes, rest, 2)
            if has_field:
                project_obstacles(nodes, sdf, origin, res)
        worst = 0.0
        turn = 0.0
        for i in range(n):
            for a in range(3):
                step[i, a] = nodes[i, a] - prev[i, a]
                turn += step[i, a] * last_step[i, a]
            m = np.sqrt(step[i, 0] ** 2 + step[i, 1] ** 2 + step[i, 2] ** 2)
            if m > worst:
                worst = m
        if worst < tol:
            converged = True
            break
        # the fixed point does not depend on the bias; shrink it when the
        # iteration starts to flip back and forth
        if turn < 0.0 and bias > min_bias:
            bias *= 0.5
        last_step[:, :] = step
    if not converged:
        return it, False
    # a rope pulled taut around an obstacle cannot satisfy both constraints
    for _ in range(max_tighten):
        ok = max_length_error(nodes, rest) <= length_tol
        if has_field:
            ok = ok and min_sdf(nodes, sdf, origin, res) >= -sdf_tol
        if ok:
            return it, True
        project_lengths(nodes, rest, 1)
        if has_field:
            project_obstacles(nodes, sdf, origin, res)
    return it, False
