"""The three-step training loop, inference, corpus evaluation and the gradient check."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbone import ControlGridBackbone, ZeroFieldBackbone, load_backbone
from .config import AirConfig
from .decision import EpochLossTracker, end_epoch, note_reason, record_loss, should_optimize
from .deformation import DisplacementField, load_field, warp
from .losses import LossConfig, evaluate_arrays, loss_and_gradient
from .metrics import EvalReport, evaluate_pair
from .optim import optimize_pair
from .volume import DataError, LabelMap, NumericalError, Volume, load_labels, load_volume

log = logging.getLogger(__name__)


@dataclass
class Pair:
    id: str
    split: str
    moving: Volume
    fixed: Volume
    moving_labels: LabelMap | None = None
    fixed_labels: LabelMap | None = None
    true_field: DisplacementField | None = None


def load_corpus(path, splits=None) -> list[Pair]:
    root = Path(path)
    manifest_path = root / "corpus.json"
    if not manifest_path.is_file():
        raise DataError(f"no corpus manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    pairs = []
    for entry in manifest["pairs"]:
        if splits is not None and entry["split"] not in splits:
            continue
        d = root / entry["id"]
        opt = {}
        if (d / "labels_moving.json").is_file():
            opt["moving_labels"] = load_labels(d / "labels_moving")
            opt["fixed_labels"] = load_labels(d / "labels_fixed")
        if (d / "true_field.json").is_file():
            opt["true_field"] = load_field(d / "true_field")
        pairs.append(Pair(entry["id"], entry["split"], load_volume(d / "moving"), load_volume(d / "fixed"), **opt))
    return pairs


# -- training -----------------------------------------------------------------

@dataclass
class TrainLog:
    iterations: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)

    def epoch_mean_loss(self) -> list[float]:
        return [e["mean"] for e in self.epochs]

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            by_epoch = {}
            for rec in self.iterations:
                by_epoch.setdefault(rec["epoch"], []).append(rec)
            for e in self.epochs:
                for rec in by_epoch.get(e["epoch"], []):
                    fh.write(json.dumps(rec) + "\n")
                fh.write(json.dumps(e) + "\n")


def make_backbone(config: AirConfig, grid):
    bc = config.backbone
    if bc.kind == "zero":
        return ZeroFieldBackbone(grid)
    if bc.kind != "control-grid":
        raise DataError(f"unknown backbone kind {bc.kind!r}")
    return ControlGridBackbone(grid, bc.control_dims, config.outer.lr_outer, bc.update)


def _decide(config: AirConfig, tracker, loss, draw):
    if config.mode == "always-opt":
        return True, "forced"
    if config.mode == "baseline-no-opt":
        return False, "none"
    return should_optimize(tracker, config.decision, loss, draw)


def train(config: AirConfig, pairs: list[Pair], backbone=None, on_epoch=None):
    """Run the learning / decision / optimization loop; returns ``(backbone, TrainLog)``.

    ``backbone`` resumes from a checkpoint; its ``epoch`` counter says where.
    ``on_epoch(backbone, stats)`` is called after every epoch.
    """
    if not pairs:
        raise DataError("training corpus is empty")
    grid = pairs[0].moving.grid
    backbone = backbone or make_backbone(config, grid)
    cfg = config.loss
    inner = config.inner
    seed = config.outer.seed
    start = getattr(backbone, "epoch", 0)
    tracker = EpochLossTracker(epoch_index=start)
    train_log = TrainLog()
    for epoch in range(start, config.outer.epochs):
        order = np.random.default_rng(seed ^ epoch).permutation(len(pairs))
        draws = np.random.default_rng([config.decision.rng_seed, epoch])
        for idx in order:
            pair = pairs[idx]
            m, f = pair.moving, pair.fixed
            try:
                phi = backbone.predict(m, f).field
                loss_before = evaluate_arrays(m.data, f.data, phi.u, cfg).total
                if not np.isfinite(loss_before):
                    raise NumericalError(f"non-finite loss {loss_before}")
                record_loss(tracker, loss_before)
                draw = float(draws.random())
                optimize, reason = _decide(config, tracker, loss_before, draw)
                note_reason(tracker, reason)
                steps = 0
                if optimize:
                    phi, _, _ = optimize_pair(m, f, phi, inner.n_steps, inner.lr, cfg)
                    steps = inner.n_steps
                loss_after = backbone.backprop_update(m, f, phi, cfg, refined=optimize)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch}, pair {pair.id}: {exc}") from exc
            train_log.iterations.append({
                "type": "iteration", "epoch": epoch, "pair_id": pair.id, "decision_reason": reason,
                "loss_before": loss_before, "loss_after": loss_after, "inner_steps": steps,
            })
        stats = end_epoch(tracker, config.decision)
        train_log.epochs.append(stats.to_json())
        backbone.epoch = epoch + 1
        log.info("epoch %d mean loss %.6f optimized %s", epoch, stats.mean, stats.fraction_optimized_by_reason)
        if on_epoch is not None:
            on_epoch(backbone, stats)
    return backbone, train_log


# -- inference ----------------------------------------------------------------

@dataclass
class RegisterResult:
    field: DisplacementField
    warped: Volume
    elapsed: float
    report: object = None  # OptimizeReport when refined


def register(moving: Volume, fixed: Volume, backbone=None, refine: tuple[int, float] | None = None,
             cfg: LossConfig = LossConfig()) -> RegisterResult:
    """Predict (identity when ``backbone`` is None), optionally refine, and warp.

    ``elapsed`` is the wall time of all three.
    """
    t0 = time.perf_counter()
    if backbone is None:
        backbone = ZeroFieldBackbone(moving.grid)
    phi = backbone.predict(moving, fixed).field
    report = None
    if refine is not None:
        n, lr = refine
        phi, warped, report = optimize_pair(moving, fixed, phi, int(n), float(lr), cfg)
    else:
        warped = warp(moving, phi)
    return RegisterResult(phi, warped, time.perf_counter() - t0, report)


def evaluate_corpus(pairs: list[Pair], backbone, refine=None, cfg: LossConfig = LossConfig(),
                    method: str = "method") -> tuple[dict, list[dict]]:
    """Per-pair reports and one summary row with the standard summary columns."""
    reports = []
    by_split: dict[str, list[EvalReport]] = {}
    for pair in pairs:
        if pair.moving_labels is None:
            raise DataError(f"pair {pair.id} has no label maps")
        res = register(pair.moving, pair.fixed, backbone, refine, cfg)
        rep = evaluate_pair(pair.moving_labels, pair.fixed_labels, res.field, res.elapsed)
        by_split.setdefault(pair.split, []).append(rep)
        reports.append({"pair_id": pair.id, "split": pair.split, "method": method, **rep.to_json()})

    def mean(split, attr):
        vals = [getattr(r, attr) for r in by_split.get(split, [])]
        return float(np.mean(vals)) if vals else None

    row = {
        "method": method,
        "dsc_val": mean("val", "mean_dice"),
        "neg_jac_pct": mean("test", "neg_jacobian_pct"),
        "dsc_test": mean("test", "mean_dice"),
        "inference_s": mean("test", "inference_seconds"),
    }
    return row, reports


def open_backbone(path):
    if path in (None, "identity"):
        return None
    return load_backbone(path)


# -- gradient check -----------------------------------------------------------

@dataclass
class GradcheckResult:
    size: int
    seed: int
    probes: int
    step: float
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def text(self) -> str:
        return (
            f"gradcheck size={self.size}^3 seed={self.seed} probes={self.probes} h={self.step:g}\n"
            f"max relative error: {self.max_rel_err:.3e} (tolerance {self.tol:g})\n"
            f"{'PASS' if self.passed else 'FAIL'}"
        )


def gradcheck(size: int = 12, seed: int = 0, probes: int = 64, step: float = 1e-3, tol: float = 1e-4,
              cfg: LossConfig = LossConfig()) -> GradcheckResult:
    """Compare the analytic gradient of ``L_all`` to central differences at random voxels.

    Sample offsets keep their fractional part in [0.05, 0.95] so no probe sits
    on an interpolation kink or the clamp boundary.
    """
    rng = np.random.default_rng(seed)
    shape = (size, size, size)
    moving = rng.random(shape)
    fixed = rng.random(shape)
    u = rng.integers(-2, 2, (3,) + shape) + rng.uniform(0.05, 0.95, (3,) + shape)
    _, grad = loss_and_gradient(moving, fixed, u, cfg)
    worst = 0.0
    for _ in range(probes):
        c = int(rng.integers(3))
        z, y, x = (int(i) for i in rng.integers(size, size=3))
        up = u.copy()
        up[c, z, y, x] += step
        um = u.copy()
        um[c, z, y, x] -= step
        fd = (evaluate_arrays(moving, fixed, up, cfg).total - evaluate_arrays(moving, fixed, um, cfg).total) / (2 * step)
        a = grad[c, z, y, x]
        worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-12))
    return GradcheckResult(size, seed, probes, step, worst, tol)
