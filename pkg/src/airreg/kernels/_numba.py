"""Numba versions of the voxel kernels in ``_numpy``; same signatures and semantics."""

import math

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _cell(coord, n):
    c = min(max(coord, 0.0), n - 1.0)
    i0 = min(int(math.floor(c)), n - 2)
    inside = 1.0 if (coord >= 0.0 and coord <= n - 1.0) else 0.0
    return i0, c - i0, inside


@njit(cache=True)
def _trilinear(img, uz, uy, ux):
    D, H, W = img.shape
    out = np.empty((D, H, W))
    for z in range(D):
        for y in range(H):
            for x in range(W):
                z0, fz, _ = _cell(z + uz[z, y, x], D)
                y0, fy, _ = _cell(y + uy[z, y, x], H)
                x0, fx, _ = _cell(x + ux[z, y, x], W)
                c00 = img[z0, y0, x0] * (1.0 - fx) + img[z0, y0, x0 + 1] * fx
                c01 = img[z0, y0 + 1, x0] * (1.0 - fx) + img[z0, y0 + 1, x0 + 1] * fx
                c10 = img[z0 + 1, y0, x0] * (1.0 - fx) + img[z0 + 1, y0, x0 + 1] * fx
                c11 = img[z0 + 1, y0 + 1, x0] * (1.0 - fx) + img[z0 + 1, y0 + 1, x0 + 1] * fx
                c0 = c00 * (1.0 - fy) + c01 * fy
                c1 = c10 * (1.0 - fy) + c11 * fy
                out[z, y, x] = c0 * (1.0 - fz) + c1 * fz
    return out


@njit(cache=True)
def _trilinear_grad(img, uz, uy, ux):
    D, H, W = img.shape
    val = np.empty((D, H, W))
    gz = np.empty((D, H, W))
    gy = np.empty((D, H, W))
    gx = np.empty((D, H, W))
    for z in range(D):
        for y in range(H):
            for x in range(W):
                z0, fz, iz = _cell(z + uz[z, y, x], D)
                y0, fy, iy = _cell(y + uy[z, y, x], H)
                x0, fx, ix = _cell(x + ux[z, y, x], W)
                c000 = img[z0, y0, x0]
                c001 = img[z0, y0, x0 + 1]
                c010 = img[z0, y0 + 1, x0]
                c011 = img[z0, y0 + 1, x0 + 1]
                c100 = img[z0 + 1, y0, x0]
                c101 = img[z0 + 1, y0, x0 + 1]
                c110 = img[z0 + 1, y0 + 1, x0]
                c111 = img[z0 + 1, y0 + 1, x0 + 1]
                c00 = c000 * (1.0 - fx) + c001 * fx
                c01 = c010 * (1.0 - fx) + c011 * fx
                c10 = c100 * (1.0 - fx) + c101 * fx
                c11 = c110 * (1.0 - fx) + c111 * fx
                c0 = c00 * (1.0 - fy) + c01 * fy
                c1 = c10 * (1.0 - fy) + c11 * fy
                val[z, y, x] = c0 * (1.0 - fz) + c1 * fz
                gz[z, y, x] = (c1 - c0) * iz
                gy[z, y, x] = ((c01 - c00) * (1.0 - fz) + (c11 - c10) * fz) * iy
                e0 = (c001 - c000) * (1.0 - fy) + (c011 - c010) * fy
                e1 = (c101 - c100) * (1.0 - fy) + (c111 - c110) * fy
                gx[z, y, x] = (e0 * (1.0 - fz) + e1 * fz) * ix
    return val, gz, gy, gx


@njit(cache=True)
def _nearest(labels, uz, uy, ux):
    D, H, W = labels.shape
    out = np.empty_like(labels)
    for z in range(D):
        for y in range(H):
            for x in range(W):
                zi = min(max(int(math.floor(z + uz[z, y, x] + 0.5)), 0), D - 1)
                yi = min(max(int(math.floor(y + uy[z, y, x] + 0.5)), 0), H - 1)
                xi = min(max(int(math.floor(x + ux[z, y, x] + 0.5)), 0), W - 1)
                out[z, y, x] = labels[zi, yi, xi]
    return out


@njit(cache=True)
def _box_line(src, dst, cs, r):
    n = src.shape[0]
    cs[0] = 0.0
    for i in range(n):
        cs[i + 1] = cs[i] + src[i]
    for i in range(n):
        dst[i] = cs[min(i + r + 1, n)] - cs[max(i - r, 0)]


@njit(cache=True)
def _box_sum(a, r):
    D, H, W = a.shape
    cs = np.empty(max(D, H, W) + 1)
    tmp = np.empty(max(D, H, W))
    out = np.empty((D, H, W))
    for z in range(D):
        for y in range(H):
            _box_line(a[z, y, :], out[z, y, :], cs, r)
    for z in range(D):
        for x in range(W):
            _box_line(out[z, :, x].copy(), tmp[:H], cs, r)
            out[z, :, x] = tmp[:H]
    for y in range(H):
        for x in range(W):
            _box_line(out[:, y, x].copy(), tmp[:D], cs, r)
            out[:, y, x] = tmp[:D]
    return out


@njit(cache=True)
def _adam_update(params, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    p = params.ravel()
    g = grad.ravel()
    mm = m.ravel()
    vv = v.ravel()
    for i in range(p.shape[0]):
        gi = g[i]
        mm[i] = beta1 * mm[i] + (1.0 - beta1) * gi
        vv[i] = beta2 * vv[i] + (1.0 - beta2) * (gi * gi)
        p[i] -= lr * (mm[i] / bc1) / (math.sqrt(vv[i] / bc2) + eps)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def trilinear(img, uz, uy, ux):
    return _trilinear(_f64(img), _f64(uz), _f64(uy), _f64(ux))


def trilinear_grad(img, uz, uy, ux):
    return _trilinear_grad(_f64(img), _f64(uz), _f64(uy), _f64(ux))


def nearest(labels, uz, uy, ux):
    return _nearest(np.ascontiguousarray(labels), _f64(uz), _f64(uy), _f64(ux))


def box_sum(a, r):
    return _box_sum(_f64(a), int(r))


def adam_update(params, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    # ravel() must return views for the in-place update to land.
    for arr in (params, m, v):
        if not arr.flags.c_contiguous or arr.dtype != np.float64:
            raise ValueError("adam_update needs C-contiguous float64 buffers")
    _adam_update(params, _f64(grad), m, v, float(lr), float(beta1), float(beta2),
                 float(eps), float(bc1), float(bc2))
