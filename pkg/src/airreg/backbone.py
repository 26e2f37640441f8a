"""The learning step: predictors that map a pair to an initial displacement field.

``ControlGridBackbone`` is a linear model: a coarse grid of learnable
displacement vectors ``theta`` is upsampled trilinearly to full resolution.
Because the model is linear, the pull-back of a full-resolution gradient is
the exact transpose of the upsampler.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .deformation import DisplacementField, _same_grid
from .losses import LossConfig, evaluate_arrays, loss_and_gradient
from .optim import AdamState, adam_update_
from .volume import RAW_DTYPE, DataError, GridSpec, NumericalError, Volume

FORMAT_VERSION = 1
UPDATE_MODES = ("straight-through", "distillation")


@dataclass
class BackbonePrediction:
    field: DisplacementField
    aux: object = None


def interp_matrix(n_full: int, n_ctrl: int) -> np.ndarray:
    """``(n_full, n_ctrl)`` linear interpolation weights with corner-aligned endpoints."""
    t = np.arange(n_full) * (n_ctrl - 1) / (n_full - 1)
    j0 = np.minimum(np.floor(t).astype(int), n_ctrl - 2)
    f = t - j0
    M = np.zeros((n_full, n_ctrl))
    M[np.arange(n_full), j0] = 1.0 - f
    M[np.arange(n_full), j0 + 1] += f
    return M


def upsample(theta: np.ndarray, mz, my, mx) -> np.ndarray:
    """``(3, d, h, w)`` control displacements to ``(3, D, H, W)``."""
    return np.einsum("zk,yj,xi,ckji->czyx", mz, my, mx, theta, optimize=True)


def pullback(g: np.ndarray, mz, my, mx) -> np.ndarray:
    """Adjoint of :func:`upsample`."""
    return np.einsum("zk,yj,xi,czyx->ckji", mz, my, mx, g, optimize=True)


class ZeroFieldBackbone:
    """Always predicts the identity deformation; has no parameters."""

    kind = "zero"

    def __init__(self, grid: GridSpec | None = None):
        self.grid = grid

    def predict(self, moving: Volume, fixed: Volume) -> BackbonePrediction:
        _same_grid(moving.grid, fixed.grid)
        return BackbonePrediction(DisplacementField.zeros(moving.grid))

    def backprop_update(self, moving: Volume, fixed: Volume, phi_opt: DisplacementField,
                        cfg: LossConfig, refined: bool = True) -> float:
        return evaluate_arrays(moving.data, fixed.data, phi_opt.u, cfg).total

    def save(self, path) -> None:
        out = Path(path)
        out.mkdir(parents=True, exist_ok=True)
        manifest = {"format_version": FORMAT_VERSION, "kind": self.kind,
                    "grid": self.grid.to_json() if self.grid else None}
        (out / "backbone.json").write_text(json.dumps(manifest, indent=2) + "\n")


class ControlGridBackbone:
    kind = "control-grid"

    def __init__(self, grid: GridSpec, control_dims=(4, 4, 4), lr_outer: float = 1e-4,
                 update: str = "straight-through", theta: np.ndarray | None = None):
        control_dims = tuple(int(c) for c in control_dims)
        if len(control_dims) != 3 or min(control_dims) < 2:
            raise DataError(f"control_dims must be three values >= 2, got {list(control_dims)}")
        if update not in UPDATE_MODES:
            raise DataError(f"unknown update mode {update!r}")
        if not lr_outer > 0:
            raise DataError("lr_outer must be positive")
        self.grid = grid
        self.control_dims = control_dims
        self.lr_outer = float(lr_outer)
        self.update = update
        w, h, d = control_dims
        W, H, D = grid.dims
        self._mats = (interp_matrix(D, d), interp_matrix(H, h), interp_matrix(W, w))
        shape = (3, d, h, w)
        # parameters and moments live in float32, like the checkpoint
        self.theta = np.zeros(shape, dtype=np.float32) if theta is None else np.array(theta, dtype=np.float32)
        if self.theta.shape != shape:
            raise DataError(f"theta has shape {self.theta.shape}, expected {shape}")
        self.adam_m = np.zeros(shape, dtype=np.float32)
        self.adam_v = np.zeros(shape, dtype=np.float32)
        self.adam_t = 0
        self.epoch = 0

    def upsample(self, theta=None) -> np.ndarray:
        theta = self.theta if theta is None else theta
        return upsample(np.asarray(theta, dtype=np.float64), *self._mats)

    def pullback(self, g: np.ndarray) -> np.ndarray:
        return pullback(np.asarray(g, dtype=np.float64), *self._mats)

    def predict(self, moving: Volume, fixed: Volume) -> BackbonePrediction:
        _same_grid(moving.grid, fixed.grid)
        _same_grid(moving.grid, self.grid)
        return BackbonePrediction(DisplacementField(self.grid, self.upsample()))

    def theta_gradient(self, moving: Volume, fixed: Volume, phi_opt: DisplacementField, cfg: LossConfig,
                       refined: bool = True):
        """Loss at ``phi_opt`` and the gradient handed to ``theta``.

        Straight-through: the ``L_all`` gradient at ``phi_opt`` is applied as if
        ``phi_opt`` were the prediction. Distillation (refined pairs only): the
        gradient of the mean squared distance between prediction and ``phi_opt``.
        Unrefined pairs always take the plain ``L_all`` gradient.
        """
        if self.update == "distillation" and refined:
            # target: mean squared distance between the prediction and the refined field
            loss = evaluate_arrays(moving.data, fixed.data, phi_opt.u, cfg)
            g = 2.0 * (self.upsample() - np.asarray(phi_opt.u, dtype=np.float64)) / self.grid.size
        else:
            loss, g = loss_and_gradient(moving.data, fixed.data, phi_opt.u, cfg)
        return loss.total, self.pullback(g)

    def backprop_update(self, moving: Volume, fixed: Volume, phi_opt: DisplacementField,
                        cfg: LossConfig, refined: bool = True) -> float:
        """One Adam step on ``theta``; returns ``L_all`` at ``phi_opt``.

        ``refined`` says whether ``phi_opt`` came out of the optimization step.
        """
        _same_grid(phi_opt.grid, self.grid)
        total, g_theta = self.theta_gradient(moving, fixed, phi_opt, cfg, refined)
        if not np.all(np.isfinite(g_theta)):
            raise NumericalError("non-finite backbone gradient")
        params = self.theta.astype(np.float64)
        state = AdamState(self.adam_m.astype(np.float64), self.adam_v.astype(np.float64),
                          lr=self.lr_outer, t=self.adam_t)
        adam_update_(params, g_theta, state)
        self.theta = params.astype(np.float32)
        self.adam_m = state.m.astype(np.float32)
        self.adam_v = state.v.astype(np.float32)
        self.adam_t = state.t
        return total

    def manifest(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "control_dims": list(self.control_dims),
            "grid": self.grid.to_json(),
            "lr_outer": self.lr_outer,
            "update": self.update,
            "adam_t": self.adam_t,
            "epoch": self.epoch,
        }

    def save(self, path) -> None:
        """Write ``backbone.json`` plus ``theta.raw``, ``adam_m.raw``, ``adam_v.raw`` (f32le, planar)."""
        out = Path(path)
        out.mkdir(parents=True, exist_ok=True)
        (out / "backbone.json").write_text(json.dumps(self.manifest(), indent=2) + "\n")
        for name, arr in (("theta", self.theta), ("adam_m", self.adam_m), ("adam_v", self.adam_v)):
            (out / f"{name}.raw").write_bytes(np.ascontiguousarray(arr, dtype=RAW_DTYPE).tobytes())


def load_backbone(path):
    path = Path(path)
    mpath = path / "backbone.json" if path.is_dir() else path
    if not mpath.is_file():
        raise DataError(f"missing backbone manifest {mpath}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint version {manifest.get('format_version')!r}")
    kind = manifest.get("kind")
    grid_json = manifest.get("grid")
    grid = GridSpec(tuple(grid_json["dims"]), tuple(grid_json["spacing"])) if grid_json else None
    if kind == "zero":
        return ZeroFieldBackbone(grid)
    if kind != ControlGridBackbone.kind:
        raise DataError(f"unknown backbone kind {kind!r}")
    bb = ControlGridBackbone(grid, manifest["control_dims"], manifest["lr_outer"], manifest.get("update", "straight-through"))
    shape = bb.theta.shape
    for name in ("theta", "adam_m", "adam_v"):
        raw = mpath.parent / f"{name}.raw"
        if not raw.is_file():
            raise DataError(f"missing checkpoint file {raw}")
        arr = np.fromfile(raw, dtype=RAW_DTYPE)
        if arr.size != int(np.prod(shape)):
            raise DataError(
                f"length mismatch: {raw} holds {arr.size} values, control_dims "
                f"{manifest['control_dims']} need {int(np.prod(shape))}"
            )
        setattr(bb, name, arr.astype(np.float32).reshape(shape))
    bb.adam_t = int(manifest.get("adam_t", 0))
    bb.epoch = int(manifest.get("epoch", 0))
    return bb
