"""Compiled trilinear sampling kernels.

Grids are extended by zeros: a point with ``-1 < x < n`` on every axis has a
(possibly partial) value, anything further out reads zero.
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _node(data, i, j, k, c):
    nx, ny, nz = data.shape[0], data.shape[1], data.shape[2]
    if i < 0 or j < 0 or k < 0 or i >= nx or j >= ny or k >= nz:
        return 0.0
    return data[i, j, k, c]


@njit(cache=True)
def _value(data, x, y, z, c):
    nx, ny, nz = data.shape[0], data.shape[1], data.shape[2]
    if not (-1.0 < x < nx and -1.0 < y < ny and -1.0 < z < nz):
        return 0.0
    i = int(np.floor(x))
    j = int(np.floor(y))
    k = int(np.floor(z))
    fx, fy, fz = x - i, y - j, z - k
    v = 0.0
    for bx in range(2):
        wx = fx if bx else 1.0 - fx
        for by in range(2):
            wy = fy if by else 1.0 - fy
            for bz in range(2):
                wz = fz if bz else 1.0 - fz
                v += wx * wy * wz * _node(data, i + bx, j + by, k + bz, c)
    return v


@njit(cache=True)
def interp(data, coords, out):
    """Values of ``data[..., c]`` at ``coords`` (N, 3) into ``out`` (N, C)."""
    for p in range(coords.shape[0]):
        for c in range(data.shape[3]):
            out[p, c] = _value(data, coords[p, 0], coords[p, 1], coords[p, 2], c)


@njit(cache=True)
def interp_grad(data, coords, out, grad):
    """Values and spatial derivatives; ``grad`` has shape (N, C, 3).

    On grid planes the derivative is the mean of the two one-sided slopes.
    """
    nx, ny, nz = data.shape[0], data.shape[1], data.shape[2]
    for p in range(coords.shape[0]):
        x, y, z = coords[p, 0], coords[p, 1], coords[p, 2]
        for c in range(data.shape[3]):
            if not (-1.0 < x < nx and -1.0 < y < ny and -1.0 < z < nz):
                out[p, c] = 0.0
                grad[p, c, 0] = 0.0
                grad[p, c, 1] = 0.0
                grad[p, c, 2] = 0.0
                continue
            i = int(np.floor(x))
            j = int(np.floor(y))
            k = int(np.floor(z))
            fx, fy, fz = x - i, y - j, z - k
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
                        d = _node(data, i + bx, j + by, k + bz, c)
                        v += wx * wy * wz * d
                        gx += sx * wy * wz * d
                        gy += wx * sy * wz * d
                        gz += wx * wy * sz * d
            if fx == 0.0:
                gx = 0.5 * (_value(data, x + 1.0, y, z, c) - _value(data, x - 1.0, y, z, c))
            if fy == 0.0:
                gy = 0.5 * (_value(data, x, y + 1.0, z, c) - _value(data, x, y - 1.0, z, c))
            if fz == 0.0:
                gz = 0.5 * (_value(data, x, y, z + 1.0, c) - _value(data, x, y, z - 1.0, c))
            out[p, c] = v
            grad[p, c, 0] = gx
            grad[p, c, 1] = gy
            grad[p, c, 2] = gz


@njit(cache=True)
def scatter(weights, coords, out):
    """Transpose of :func:`interp`: accumulate ``weights`` (N, C) onto ``out``."""
    nx, ny, nz = out.shape[0], out.shape[1], out.shape[2]
    for p in range(coords.shape[0]):
        x, y, z = coords[p, 0], coords[p, 1], coords[p, 2]
        if not (-1.0 < x < nx and -1.0 < y < ny and -1.0 < z < nz):
            continue
        i = int(np.floor(x))
        j = int(np.floor(y))
        k = int(np.floor(z))
        fx, fy, fz = x - i, y - j, z - k
        for bx in range(2):
            ii = i + bx
            if ii < 0 or ii >= nx:
                continue
            wx = fx if bx else 1.0 - fx
            for by in range(2):
                jj = j + by
                if jj < 0 or jj >= ny:
                    continue
                wy = fy if by else 1.0 - fy
                for bz in range(2):
                    kk = k + bz
                    if kk < 0 or kk >= nz:
                        continue
                    wz = fz if bz else 1.0 - fz
                    w = wx * wy * wz
                    for c in range(out.shape[3]):
                        out[ii, jj, kk, c] += w * weights[p, c]


@njit(cache=True)
def box_sum(x, radius):
    """Windowed sums over ``(2r+1)**3`` neighbourhoods clipped at the faces.

    ``x`` has shape (nx, ny, nz, C); channels are independent.
    """
    nx, ny, nz, nc = x.shape
    a = np.empty_like(x)
    for j in range(ny):
        for k in range(nz):
            for c in range(nc):
                s = 0.0
                for i in range(min(radius, nx - 1) + 1):
                    s += x[i, j, k, c]
                for i in range(nx):
                    a[i, j, k, c] = s
                    if i + radius + 1 < nx:
                        s += x[i + radius + 1, j, k, c]
                    if i - radius >= 0:
                        s -= x[i - radius, j, k, c]
    b = np.empty_like(x)
    for i in range(nx):
        for k in range(nz):
            for c in range(nc):
                s = 0.0
                for j in range(min(radius, ny - 1) + 1):
                    s += a[i, j, k, c]
                for j in range(ny):
                    b[i, j, k, c] = s
                    if j + radius + 1 < ny:
                        s += a[i, j + radius + 1, k, c]
                    if j - radius >= 0:
                        s -= a[i, j - radius, k, c]
    for i in range(nx):
        for j in range(ny):
            for c in range(nc):
                s = 0.0
                for k in range(min(radius, nz - 1) + 1):
                    s += b[i, j, k, c]
                for k in range(nz):
                    a[i, j, k, c] = s
                    if k + radius + 1 < nz:
                        s += b[i, j, k + radius + 1, c]
                    if k - radius >= 0:
                        s -= b[i, j, k - radius, c]
    return a
