"""Local NCC similarity, diffusion regularization, their sum, and gradients.

For each voxel ``p`` the local NCC uses the cubic window centred on ``p``,
clipped at the volume border::

    cc(p) = cross(p)^2 / (var_w(p) * var_f(p) + epsilon)

with ``cross``, ``var_*`` the sums of products of deviations from the window
means. The similarity loss is ``-mean(cc)``. The regularizer sums squared
forward differences of every displacement component, divided by the voxel
count unless ``reg_normalize`` is off. All accumulation happens in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .deformation import DisplacementField, _same_grid, warp_array
from .volume import DataError, NumericalError, Volume


@dataclass(frozen=True)
class LossConfig:
    window: int = 9
    epsilon: float = 1e-5
    lambda_reg: float = 1.0
    reg_normalize: bool = True

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise DataError(f"window must be odd and >= 3, got {self.window}")
        if not self.epsilon > 0:
            raise DataError("epsilon must be positive")
        if not self.lambda_reg >= 0:
            raise DataError("lambda_reg must be non-negative")

    @property
    def radius(self) -> int:
        return self.window // 2


@dataclass(frozen=True)
class LossBreakdown:
    sim: float
    reg: float
    total: float

    def to_json(self) -> dict:
        return {"sim": self.sim, "reg": self.reg, "total": self.total}


def _window_counts(shape, r):
    counts = [np.minimum(np.arange(n) + r, n - 1) - np.maximum(np.arange(n) - r, 0) + 1 for n in shape]
    return counts[0][:, None, None] * counts[1][None, :, None] * counts[2][None, None, :]


def _lncc_terms(I, J, r, eps):
    n = _window_counts(I.shape, r).astype(np.float64)
    s_i = kernels.box_sum(I, r)
    s_j = kernels.box_sum(J, r)
    s_ii = kernels.box_sum(I * I, r)
    s_jj = kernels.box_sum(J * J, r)
    s_ij = kernels.box_sum(I * J, r)
    mean_i = s_i / n
    mean_j = s_j / n
    cross = s_ij - s_i * mean_j
    var_i = np.maximum(s_ii - s_i * mean_i, 0.0)
    var_j = np.maximum(s_jj - s_j * mean_j, 0.0)
    denom = var_i * var_j + eps
    return cross, var_i, var_j, denom, mean_i, mean_j


def lncc_array(warped, fixed, window=9, epsilon=1e-5) -> np.ndarray:
    I = np.asarray(warped, dtype=np.float64)
    J = np.asarray(fixed, dtype=np.float64)
    cross, _, _, denom, _, _ = _lncc_terms(I, J, window // 2, epsilon)
    return cross * cross / denom


def sim_loss_and_grad(warped, fixed, window=9, epsilon=1e-5):
    """Similarity loss and its gradient w.r.t. the warped intensities."""
    I = np.asarray(warped, dtype=np.float64)
    J = np.asarray(fixed, dtype=np.float64)
    r = window // 2
    cross, var_i, var_j, denom, mean_i, mean_j = _lncc_terms(I, J, r, epsilon)
    cc = cross * cross / denom
    N = I.size
    sim = -float(cc.sum()) / N

    # d cc(q) / d I(p) = alpha_q (J_p - mean_j(q)) - beta_q (I_p - mean_i(q)), summed over
    # windows q that contain p; window membership is symmetric, so that sum is a box sum.
    alpha = 2.0 * cross / denom
    beta = 2.0 * cc * var_j / denom
    grad = (
        J * kernels.box_sum(alpha, r)
        - kernels.box_sum(alpha * mean_j, r)
        - I * kernels.box_sum(beta, r)
        + kernels.box_sum(beta * mean_i, r)
    )
    return sim, grad * (-1.0 / N)


def reg_value(u: np.ndarray, normalize: bool = True) -> float:
    u = np.asarray(u, dtype=np.float64)
    total = 0.0
    for axis in (1, 2, 3):
        d = np.diff(u, axis=axis)
        total += float(np.sum(d * d))
    return total / u[0].size if normalize else total


def reg_gradient(u: np.ndarray, normalize: bool = True) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    g = np.zeros_like(u)
    for axis in (1, 2, 3):
        d = 2.0 * np.diff(u, axis=axis)
        hi = [slice(None)] * 4
        lo = [slice(None)] * 4
        hi[axis] = slice(1, None)
        lo[axis] = slice(None, -1)
        g[tuple(hi)] += d
        g[tuple(lo)] -= d
    return g / u[0].size if normalize else g


def lncc(warped: Volume, fixed: Volume, cfg: LossConfig = LossConfig()) -> Volume:
    _same_grid(warped.grid, fixed.grid)
    return Volume(warped.grid, lncc_array(warped.data, fixed.data, cfg.window, cfg.epsilon))


def sim_loss(warped: Volume, fixed: Volume, cfg: LossConfig = LossConfig()) -> float:
    _same_grid(warped.grid, fixed.grid)
    cc = lncc_array(warped.data, fixed.data, cfg.window, cfg.epsilon)
    return -float(cc.sum()) / cc.size


def reg_loss(field: DisplacementField, cfg: LossConfig = LossConfig()) -> float:
    return reg_value(field.u, cfg.reg_normalize)


def total_loss(warped: Volume, fixed: Volume, field: DisplacementField, cfg: LossConfig = LossConfig()) -> LossBreakdown:
    sim = sim_loss(warped, fixed, cfg)
    reg = reg_loss(field, cfg)
    return LossBreakdown(sim, reg, sim + cfg.lambda_reg * reg)


def evaluate_arrays(moving, fixed, u, cfg: LossConfig) -> LossBreakdown:
    """Loss at displacement ``u``: warps ``moving`` then scores it against ``fixed``."""
    warped = warp_array(moving, u)
    cc = lncc_array(warped, fixed, cfg.window, cfg.epsilon)
    sim = -float(cc.sum()) / cc.size
    reg = reg_value(u, cfg.reg_normalize)
    return LossBreakdown(sim, reg, sim + cfg.lambda_reg * reg)


def loss_and_gradient(moving, fixed, u, cfg: LossConfig) -> tuple[LossBreakdown, np.ndarray]:
    """``L_all`` at ``u`` and ``dL_all/du`` with shape ``(3, D, H, W)``."""
    u = np.asarray(u, dtype=np.float64)
    warped, gz, gy, gx = kernels.trilinear_grad(moving, u[2], u[1], u[0])
    sim, d_warped = sim_loss_and_grad(warped, fixed, cfg.window, cfg.epsilon)
    reg = reg_value(u, cfg.reg_normalize)
    grad = np.stack([d_warped * gx, d_warped * gy, d_warped * gz])
    if cfg.lambda_reg:
        grad += cfg.lambda_reg * reg_gradient(u, cfg.reg_normalize)
    loss = LossBreakdown(sim, reg, sim + cfg.lambda_reg * reg)
    if not np.isfinite(loss.total) or not np.all(np.isfinite(grad)):
        raise NumericalError(f"non-finite loss or gradient (loss={loss.total})")
    return loss, grad


def total_loss_gradient(moving: Volume, fixed: Volume, field: DisplacementField,
                        cfg: LossConfig = LossConfig()) -> DisplacementField:
    _same_grid(moving.grid, fixed.grid)
    _same_grid(moving.grid, field.grid)
    _, grad = loss_and_gradient(moving.data, fixed.data, field.u, cfg)
    return DisplacementField(field.grid, grad)
