"""Adaptive selection of the pairs that go through instance optimization.

A pair is sent to the optimizer when its loss is at or above the running
``loss_quantile`` of this epoch's losses (once ``warmup_pairs`` losses have
been seen), or when the caller's uniform draw exceeds ``random_threshold``.
Quantiles use linear interpolation between order statistics: for sorted
values ``x[0..n-1]`` and ``q``, ``pos = q*(n-1)`` and the result is
``x[floor(pos)] + (pos - floor(pos)) * (x[floor(pos)+1] - x[floor(pos)])``.
A ``loss_quantile`` of 1.0 or more disables the loss criterion (the top 0% of
an epoch is empty).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .volume import DataError

REASONS = ("loss", "random", "forced", "none")


@dataclass(frozen=True)
class DecisionPolicy:
    loss_quantile: float = 0.95
    random_threshold: float = 0.95
    warmup_pairs: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.loss_quantile <= 1.0:
            raise DataError("loss_quantile must lie in [0, 1]")
        if not 0.0 <= self.random_threshold <= 1.0:
            raise DataError("random_threshold must lie in [0, 1]")
        if self.warmup_pairs < 0:
            raise DataError("warmup_pairs must be >= 0")

    @property
    def loss_criterion_enabled(self) -> bool:
        return self.loss_quantile < 1.0


@dataclass
class EpochStats:
    epoch: int
    count: int
    mean: float | None
    quantile: float | None
    fraction_optimized_by_reason: dict[str, float]

    def to_json(self) -> dict:
        return {
            "type": "epoch",
            "epoch": self.epoch,
            "count": self.count,
            "mean": self.mean,
            "quantile": self.quantile,
            "fraction_optimized_by_reason": dict(self.fraction_optimized_by_reason),
        }


@dataclass
class EpochLossTracker:
    epoch_index: int = 0
    losses_seen: list[float] = field(default_factory=list)
    reasons: Counter = field(default_factory=Counter)

    @property
    def count(self) -> int:
        return len(self.losses_seen)

    def quantile(self, q: float) -> float | None:
        if not self.losses_seen:
            return None
        return float(np.quantile(np.asarray(self.losses_seen), q, method="linear"))


def record_loss(tracker: EpochLossTracker, loss: float) -> None:
    if not math.isfinite(loss):
        raise DataError(f"cannot record non-finite loss {loss!r}")
    tracker.losses_seen.append(float(loss))


def note_reason(tracker: EpochLossTracker, reason: str) -> None:
    if reason not in REASONS:
        raise DataError(f"unknown decision reason {reason!r}")
    tracker.reasons[reason] += 1


def should_optimize(tracker: EpochLossTracker, policy: DecisionPolicy, pair_loss: float,
                    rng_draw: float) -> tuple[bool, str]:
    """Decide for one pair; the loss criterion is checked before the random one.

    Returns ``(True, "loss")``, ``(True, "random")`` or ``(False, "none")``. The
    pair's own loss should already be recorded in ``tracker``.
    """
    if (policy.loss_criterion_enabled and tracker.count >= policy.warmup_pairs
            and tracker.count > 0 and pair_loss >= tracker.quantile(policy.loss_quantile)):
        return True, "loss"
    if rng_draw > policy.random_threshold:
        return True, "random"
    return False, "none"


def end_epoch(tracker: EpochLossTracker, policy: DecisionPolicy) -> EpochStats:
    """Summarize the epoch and reset ``tracker`` for the next one."""
    n = tracker.count
    decided = sum(tracker.reasons.values())
    fractions = {r: (tracker.reasons[r] / decided if decided else 0.0) for r in REASONS}
    stats = EpochStats(
        epoch=tracker.epoch_index,
        count=n,
        mean=float(np.mean(tracker.losses_seen)) if n else None,
        quantile=tracker.quantile(policy.loss_quantile),
        fraction_optimized_by_reason=fractions,
    )
    tracker.epoch_index += 1
    tracker.losses_seen = []
    tracker.reasons = Counter()
    return stats
