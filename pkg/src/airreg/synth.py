"""Deterministic synthetic registration pairs with analytic ground-truth fields.

The moving image plays the atlas: it depends only on the phantom kind and the
grid. The seed drives the per-pair deformation parameters that are left
unspecified (sinusoid phases, amplitude jitter) and the noise on the fixed image.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .deformation import DisplacementField, save_field, warp, warp_labels
from .volume import DataError, GridSpec, LabelMap, Volume, save_labels, save_volume

PHANTOM_KINDS = ("sphere", "two-blob", "checker-smooth")
DEFORM_KINDS = ("none", "translation", "smooth-sinusoid", "radial-expansion")


@dataclass(frozen=True)
class Deform:
    kind: str = "none"
    vector: tuple[float, float, float] = (0.0, 0.0, 0.0)  # translation, (dx, dy, dz)
    amplitude: float = 0.0
    wavelength: float = 16.0
    phase: tuple[float, float, float] | None = None  # None: drawn from the seed
    c: float = 0.0  # radial expansion rate
    jitter: float = 0.0  # relative per-pair jitter of amplitude / vector / c

    def __post_init__(self):
        if self.kind not in DEFORM_KINDS:
            raise DataError(f"unknown deformation {self.kind!r}")
        if not 0.0 <= self.jitter < 1.0:
            raise DataError("jitter must lie in [0, 1)")
        if self.kind == "smooth-sinusoid":
            if self.wavelength <= 0:
                raise DataError("wavelength must be positive")
            bound = self.wavelength / (2 * np.pi)
            if abs(self.amplitude) * (1 + self.jitter) >= bound:
                raise DataError(
                    f"fold risk: amplitude {self.amplitude} (jitter {self.jitter}) "
                    f"must stay below wavelength/(2*pi) = {bound:.4f}"
                )
        if self.kind == "radial-expansion" and self.c - abs(self.c) * self.jitter <= -1.0:
            raise DataError("fold risk: radial expansion rate must exceed -1")


@dataclass(frozen=True)
class PhantomSpec:
    grid: GridSpec = field(default_factory=lambda: GridSpec((32, 32, 32)))
    kind: str = "sphere"
    deform: Deform = field(default_factory=Deform)
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PHANTOM_KINDS:
            raise DataError(f"unknown phantom kind {self.kind!r}")
        if self.noise_sigma < 0:
            raise DataError("noise_sigma must be >= 0")

    def to_json(self) -> dict:
        d = asdict(self.deform)
        return {"grid": self.grid.to_json(), "kind": self.kind, "deform": d,
                "noise_sigma": self.noise_sigma, "seed": self.seed}

    @classmethod
    def from_json(cls, d: dict) -> "PhantomSpec":
        grid = d.get("grid", {"dims": [32, 32, 32]})
        deform = dict(d.get("deform", {}))
        for key in ("vector", "phase"):
            if deform.get(key) is not None:
                deform[key] = tuple(float(x) for x in deform[key])
        return cls(
            grid=GridSpec(tuple(grid["dims"]), tuple(grid.get("spacing", (1.0, 1.0, 1.0)))),
            kind=d.get("kind", "sphere"),
            deform=Deform(**deform),
            noise_sigma=float(d.get("noise_sigma", 0.0)),
            seed=int(d.get("seed", 0)),
        )


def _coords(grid: GridSpec):
    return np.indices(grid.shape, dtype=np.float64)  # z, y, x


def _soft_ball(z, y, x, center, radius, width=0.5):
    d = np.sqrt((x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2)
    return 0.5 * (1.0 - np.tanh((d - radius) / (2.0 * width))), d < radius


def phantom(kind: str, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Atlas intensities (roughly in [0, 1]) and integer labels for ``kind``."""
    z, y, x = _coords(grid)
    W, H, D = grid.dims
    X, Y, Z = x / (W - 1), y / (H - 1), z / (D - 1)
    # smooth texture so no correlation window is constant
    texture = 0.05 * (np.cos(2 * np.pi * 2.5 * X) + np.cos(2 * np.pi * 2.7 * Y + 0.5)
                      + np.cos(2 * np.pi * 2.3 * Z + 1.0))
    labels = np.zeros(grid.shape, dtype=np.int32)
    center = ((W - 1) / 2, (H - 1) / 2, (D - 1) / 2)
    m = min(grid.dims)
    if kind == "sphere":
        soft, hard = _soft_ball(z, y, x, center, 0.35 * m)
        img = 0.2 + 0.6 * soft
        labels[hard] = 1
    elif kind == "two-blob":
        s1, h1 = _soft_ball(z, y, x, (0.3 * (W - 1), center[1], center[2]), 0.2 * m)
        s2, h2 = _soft_ball(z, y, x, (0.7 * (W - 1), center[1], center[2]), 0.2 * m)
        img = 0.2 + 0.6 * s1 + 0.4 * s2
        labels[h1] = 1
        labels[h2] = 2
    elif kind == "checker-smooth":
        c = np.sin(3 * np.pi * X) * np.sin(3 * np.pi * Y) * np.sin(3 * np.pi * Z)
        img = 0.5 + 0.35 * c
        labels[c > 0] = 1
        labels[c <= 0] = 2
    else:
        raise DataError(f"unknown phantom kind {kind!r}")
    return img + texture + 0.05, labels


def true_displacement(spec: PhantomSpec) -> np.ndarray:
    """Ground-truth displacement ``(3, D, H, W)`` for the spec, using its seed."""
    grid, dfm = spec.grid, spec.deform
    rng = np.random.default_rng([spec.seed, 0x5EED])
    scale = 1.0 + dfm.jitter * rng.uniform(-1.0, 1.0)
    phase = dfm.phase if dfm.phase is not None else tuple(rng.uniform(0.0, 2 * np.pi, 3))
    z, y, x = _coords(grid)
    u = np.zeros((3,) + grid.shape)
    if dfm.kind == "translation":
        for c in range(3):
            u[c] = dfm.vector[c] * scale
    elif dfm.kind == "smooth-sinusoid":
        amp = dfm.amplitude * scale
        for c, coord in enumerate((x, y, z)):
            u[c] = amp * np.sin(2 * np.pi * coord / dfm.wavelength + phase[c])
    elif dfm.kind == "radial-expansion":
        W, H, D = grid.dims
        rate = dfm.c * scale
        for c, (coord, n) in enumerate(((x, W), (y, H), (z, D))):
            u[c] = rate * (coord - (n - 1) / 2)
    return u


def generate_pair(spec: PhantomSpec):
    """Returns ``(moving, fixed, true_field, moving_labels, fixed_labels)``."""
    img, labels = phantom(spec.kind, spec.grid)
    moving = Volume(spec.grid, img)
    moving_labels = LabelMap(spec.grid, labels)
    true_field = DisplacementField(spec.grid, true_displacement(spec))
    fixed = warp(moving, true_field).data
    if spec.noise_sigma > 0:
        rng = np.random.default_rng([spec.seed, 0x0015E])
        fixed = fixed + rng.normal(0.0, spec.noise_sigma, fixed.shape)
    return moving, Volume(spec.grid, fixed), true_field, moving_labels, warp_labels(moving_labels, true_field)


SPLITS = (("train", 0.7), ("val", 0.1), ("test", 0.2))


def split_names(k: int) -> list[str]:
    """Assign ``k`` pairs to train/val/test in 7:1:2 proportions, in order."""
    n_val = max(1, round(k * 0.1)) if k >= 3 else 0
    n_test = max(1, round(k * 0.2)) if k >= 2 else 0
    n_train = k - n_val - n_test
    return ["train"] * n_train + ["val"] * n_val + ["test"] * n_test


def write_corpus(spec: PhantomSpec, out, pairs: int, splits: list[str] | None = None) -> dict:
    """Write ``pairs`` phantom pairs under ``out`` plus ``corpus.json``.

    Pair ``i`` uses seed ``spec.seed + i``.
    """
    out = Path(out)
    splits = splits or split_names(pairs)
    if len(splits) != pairs:
        raise DataError("one split name per pair required")
    entries = []
    for i in range(pairs):
        moving, fixed, true_field, ml, fl = generate_pair(replace(spec, seed=spec.seed + i))
        name = f"pair_{i:04d}"
        d = out / name
        save_volume(moving, d / "moving")
        save_volume(fixed, d / "fixed")
        save_field(true_field, d / "true_field")
        save_labels(ml, d / "labels_moving")
        save_labels(fl, d / "labels_fixed")
        entries.append({"id": name, "split": splits[i], "seed": spec.seed + i})
    manifest = {"format_version": 1, "spec": spec.to_json(), "pairs": entries}
    (out / "corpus.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
