"""Adam refinement of a single pair's displacement field."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .deformation import DisplacementField, _same_grid, warp
from .losses import LossBreakdown, LossConfig, evaluate_arrays, loss_and_gradient
from .volume import DataError, NumericalError, Volume


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise DataError("Adam betas must lie in (0, 1)")
        if not (self.lr > 0 and self.eps > 0):
            raise DataError("Adam lr and eps must be positive")
        if self.m.shape != self.v.shape:
            raise DataError("Adam moment shapes differ")

    @classmethod
    def for_shape(cls, shape, lr=0.1, **kw) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), lr=lr, **kw)


def adam_update_(params: np.ndarray, grad: np.ndarray, state: AdamState) -> None:
    """In-place Adam step on a float64 C-contiguous ``params`` buffer."""
    if grad.shape != params.shape or state.m.shape != params.shape:
        raise DataError(f"shape mismatch: params {params.shape}, grad {grad.shape}, state {state.m.shape}")
    if not np.all(np.isfinite(grad)):
        bad = np.argwhere(~np.isfinite(grad))[0]
        raise NumericalError(f"non-finite gradient at index {tuple(int(i) for i in bad)} (step {state.t + 1})")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    kernels.adam_update(params, grad, state.m, state.v, state.lr, state.beta1, state.beta2, state.eps, bc1, bc2)


def adam_step(params: DisplacementField, grad: DisplacementField, state: AdamState) -> DisplacementField:
    """One Adam step; returns the updated field and advances ``state``."""
    p = np.array(params.u, dtype=np.float64, order="C")
    adam_update_(p, np.asarray(grad.u, dtype=np.float64), state)
    return DisplacementField(params.grid, p)


@dataclass
class OptimizeReport:
    steps_run: int
    loss_trace: list[LossBreakdown] = field(default_factory=list)

    @property
    def initial_total(self) -> float:
        return self.loss_trace[0].total

    @property
    def final_total(self) -> float:
        return self.loss_trace[-1].total

    def to_json(self) -> dict:
        return {
            "steps_run": self.steps_run,
            "initial_total": self.initial_total,
            "final_total": self.final_total,
            "loss_trace": [b.to_json() for b in self.loss_trace],
        }


def optimize_arrays(moving, fixed, init_u, n, lr, cfg: LossConfig):
    """Array-level core of :func:`optimize_pair`; returns ``(u_opt, report)``."""
    if n < 1:
        raise DataError(f"optimizer needs n >= 1 steps, got {n}")
    moving = np.asarray(moving, dtype=np.float64)
    fixed = np.asarray(fixed, dtype=np.float64)
    u = np.array(init_u, dtype=np.float64, order="C")
    state = AdamState.for_shape(u.shape, lr=lr)
    report = OptimizeReport(steps_run=n)
    for step in range(n):
        try:
            loss, grad = loss_and_gradient(moving, fixed, u, cfg)
            adam_update_(u, grad, state)
        except NumericalError as exc:
            raise NumericalError(f"optimizer step {step}: {exc}") from exc
        report.loss_trace.append(loss)
    final = evaluate_arrays(moving, fixed, u, cfg)
    if not np.isfinite(final.total):
        raise NumericalError(f"optimizer step {n}: non-finite loss")
    report.loss_trace.append(final)
    return u, report


def optimize_pair(moving: Volume, fixed: Volume, init_field: DisplacementField, n: int = 15,
                  lr: float = 0.1, cfg: LossConfig = LossConfig()):
    """Run ``n`` Adam steps on the field; returns ``(phi_opt, warped_opt, report)``."""
    _same_grid(moving.grid, fixed.grid)
    _same_grid(moving.grid, init_field.grid)
    u, report = optimize_arrays(moving.data, fixed.data, init_field.u, n, lr, cfg)
    phi_opt = DisplacementField(init_field.grid, u)
    return phi_opt, warp(moving, phi_opt), report
