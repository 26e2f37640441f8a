"""Displacement fields, backward warping, composition and Jacobian analysis.

A field stores ``u`` with shape ``(3, D, H, W)``; component 0 is the x
displacement, 1 is y, 2 is z, all in voxel units. The deformation is
``phi(p) = p + u(p)`` and warping pulls ``moving`` back through it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .volume import DataError, GridMismatchError, GridSpec, LabelMap, Volume, read_raw, write_raw


@dataclass(frozen=True, eq=False)
class DisplacementField:
    grid: GridSpec
    u: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u)
        if u.dtype.kind != "f":
            u = u.astype(np.float64)
        if u.shape != (3,) + self.grid.shape:
            raise DataError(f"field has shape {u.shape}, expected {(3,) + self.grid.shape}")
        if not np.all(np.isfinite(u)):
            raise DataError("displacement field contains non-finite values")
        u = u.view()
        u.flags.writeable = False
        object.__setattr__(self, "u", u)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "DisplacementField":
        return cls(grid, np.zeros((3,) + grid.shape))

    @classmethod
    def constant(cls, grid: GridSpec, dx: float, dy: float, dz: float) -> "DisplacementField":
        u = np.empty((3,) + grid.shape)
        u[0], u[1], u[2] = dx, dy, dz
        return cls(grid, u)

    @property
    def dx(self):
        return self.u[0]

    @property
    def dy(self):
        return self.u[1]

    @property
    def dz(self):
        return self.u[2]


def _same_grid(a: GridSpec, b: GridSpec):
    if a.dims != b.dims:
        raise GridMismatchError(f"grid mismatch: {list(a.dims)} vs {list(b.dims)}")


def warp_array(img: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Trilinear pull-back of a ``[z, y, x]`` array through displacement ``u``."""
    return kernels.trilinear(img, u[2], u[1], u[0])


def warp(moving: Volume, field: DisplacementField) -> Volume:
    _same_grid(moving.grid, field.grid)
    return Volume(moving.grid, warp_array(moving.data, field.u))


def warp_labels(moving: LabelMap, field: DisplacementField) -> LabelMap:
    _same_grid(moving.grid, field.grid)
    u = field.u
    return LabelMap(moving.grid, kernels.nearest(moving.labels, u[2], u[1], u[0]))


def compose(outer: DisplacementField, inner: DisplacementField) -> DisplacementField:
    """Field ``v`` with ``p + v(p) = q + outer(q)`` where ``q = p + inner(p)``.

    Pulling an image through the result equals pulling it through ``outer``
    first and then through ``inner``.
    """
    _same_grid(outer.grid, inner.grid)
    w = inner.u
    v = np.empty((3,) + inner.grid.shape)
    for c in range(3):
        v[c] = w[c] + kernels.trilinear(outer.u[c], w[2], w[1], w[0])
    return DisplacementField(inner.grid, v)


def jacobian_matrix(u: np.ndarray) -> np.ndarray:
    """Per-voxel ``d phi_c / d x_a`` as shape ``(3, 3, D, H, W)``.

    Central differences inside, one-sided differences on the faces.
    """
    if min(u.shape[1:]) < 3:
        raise DataError(f"Jacobian needs at least 3 voxels per axis, got shape {u.shape[1:]}")
    jac = np.empty((3, 3) + u.shape[1:])
    # array axis for x, y, z
    for c in range(3):
        for a, axis in enumerate((2, 1, 0)):
            jac[c, a] = np.gradient(np.asarray(u[c], dtype=np.float64), axis=axis)
        jac[c, c] += 1.0
    return jac


def jacobian_determinants(field: DisplacementField) -> Volume:
    j = jacobian_matrix(field.u)
    det = (
        j[0, 0] * (j[1, 1] * j[2, 2] - j[1, 2] * j[2, 1])
        - j[0, 1] * (j[1, 0] * j[2, 2] - j[1, 2] * j[2, 0])
        + j[0, 2] * (j[1, 0] * j[2, 1] - j[1, 1] * j[2, 0])
    )
    return Volume(field.grid, det)


def negative_jacobian_fraction(field: DisplacementField) -> float:
    """Percentage of voxels with ``det(grad phi) <= 0``."""
    det = jacobian_determinants(field).data
    return 100.0 * np.count_nonzero(det <= 0.0) / det.size


def load_field(path) -> DisplacementField:
    _, grid, arr = read_raw(path, "field")
    return DisplacementField(grid, arr)


def save_field(field: DisplacementField, path) -> None:
    write_raw(path, "field", field.grid, field.u)
