"""Pure-numpy voxel kernels.

All arrays are indexed ``[z, y, x]``. Displacements are passed per axis
(``uz, uy, ux``) in voxel units; a voxel ``p`` samples at ``p + u(p)``.
"""

import numpy as np


def _axis_cell(coord, n):
    # Clamp to [0, n-1]; the last cell is [n-2, n-1] so the right edge has frac == 1.
    c = np.clip(coord, 0.0, n - 1.0)
    i0 = np.minimum(np.floor(c).astype(np.intp), n - 2)
    frac = c - i0
    inside = (coord >= 0.0) & (coord <= n - 1.0)
    return i0, frac, inside


def _corners(img, uz, uy, ux):
    D, H, W = img.shape
    zz, yy, xx = np.indices(img.shape, dtype=np.float64)
    z0, fz, iz = _axis_cell(zz + uz, D)
    y0, fy, iy = _axis_cell(yy + uy, H)
    x0, fx, ix = _axis_cell(xx + ux, W)
    z1, y1, x1 = z0 + 1, y0 + 1, x0 + 1
    c = (
        img[z0, y0, x0], img[z0, y0, x1], img[z0, y1, x0], img[z0, y1, x1],
        img[z1, y0, x0], img[z1, y0, x1], img[z1, y1, x0], img[z1, y1, x1],
    )
    return c, (fz, fy, fx), (iz, iy, ix)


def _blend(c, fz, fy, fx):
    c000, c001, c010, c011, c100, c101, c110, c111 = c
    c00 = c000 * (1.0 - fx) + c001 * fx
    c01 = c010 * (1.0 - fx) + c011 * fx
    c10 = c100 * (1.0 - fx) + c101 * fx
    c11 = c110 * (1.0 - fx) + c111 * fx
    c0 = c00 * (1.0 - fy) + c01 * fy
    c1 = c10 * (1.0 - fy) + c11 * fy
    return c0 * (1.0 - fz) + c1 * fz


def trilinear(img, uz, uy, ux):
    img = np.asarray(img, dtype=np.float64)
    c, (fz, fy, fx), _ = _corners(img, uz, uy, ux)
    return _blend(c, fz, fy, fx)


def trilinear_grad(img, uz, uy, ux):
    """Warped values plus their derivatives w.r.t. each displacement component.

    The derivative along an axis is zero where the sample was clamped on that axis.
    """
    img = np.asarray(img, dtype=np.float64)
    c, (fz, fy, fx), (iz, iy, ix) = _corners(img, uz, uy, ux)
    c000, c001, c010, c011, c100, c101, c110, c111 = c
    val = _blend(c, fz, fy, fx)

    c00 = c000 * (1.0 - fx) + c001 * fx
    c01 = c010 * (1.0 - fx) + c011 * fx
    c10 = c100 * (1.0 - fx) + c101 * fx
    c11 = c110 * (1.0 - fx) + c111 * fx
    c0 = c00 * (1.0 - fy) + c01 * fy
    c1 = c10 * (1.0 - fy) + c11 * fy
    gz = (c1 - c0) * iz

    d0 = (c01 - c00) * (1.0 - fz) + (c11 - c10) * fz
    gy = d0 * iy

    e00 = c001 - c000
    e01 = c011 - c010
    e10 = c101 - c100
    e11 = c111 - c110
    e0 = e00 * (1.0 - fy) + e01 * fy
    e1 = e10 * (1.0 - fy) + e11 * fy
    gx = (e0 * (1.0 - fz) + e1 * fz) * ix
    return val, gz, gy, gx


def nearest(labels, uz, uy, ux):
    D, H, W = labels.shape
    zz, yy, xx = np.indices(labels.shape, dtype=np.float64)
    z = np.clip(np.floor(zz + uz + 0.5), 0, D - 1).astype(np.intp)
    y = np.clip(np.floor(yy + uy + 0.5), 0, H - 1).astype(np.intp)
    x = np.clip(np.floor(xx + ux + 0.5), 0, W - 1).astype(np.intp)
    return labels[z, y, x]


def _box_sum_axis(a, r, axis):
    n = a.shape[axis]
    cs = np.cumsum(a, axis=axis)
    shape = list(a.shape)
    shape[axis] = 1
    cs = np.concatenate([np.zeros(shape), cs], axis=axis)
    idx = np.arange(n)
    hi = np.minimum(idx + r + 1, n)
    lo = np.maximum(idx - r, 0)
    return np.take(cs, hi, axis=axis) - np.take(cs, lo, axis=axis)


def box_sum(a, r):
    """Sum over the cube of half-width ``r`` around each voxel, clipped at the borders."""
    out = np.asarray(a, dtype=np.float64)
    for axis in range(3):
        out = _box_sum_axis(out, r, axis)
    return out


def adam_update(params, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """In-place Adam update of ``params``, ``m`` and ``v``."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    params -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
