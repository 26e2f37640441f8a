"""Scalar volumes, label maps, grid geometry and the header + raw file format.

Arrays are held as ``[z, y, x]`` numpy arrays in C order, so ``array.ravel()``
follows the linear index ``((z*H) + y)*W + x``. Files are a JSON header
``<name>.json`` next to ``<name>.raw`` holding little-endian float32 samples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Invalid input data: bad files, mismatched grids, broken invariants."""


class GridMismatchError(DataError):
    pass


class NumericalError(ArithmeticError):
    """A loss or gradient became non-finite."""


RAW_DTYPE = np.dtype("<f4")
KINDS = ("scalar", "labels", "field")


@dataclass(frozen=True)
class GridSpec:
    dims: tuple[int, int, int]  # (W, H, D)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or len(spacing) != 3:
            raise DataError("dims and spacing need three components")
        if min(dims) < 2:
            raise DataError(f"every axis needs at least 2 voxels, got dims {list(dims)}")
        if not all(s > 0 and np.isfinite(s) for s in spacing):
            raise DataError(f"spacing must be positive, got {list(spacing)}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def shape(self) -> tuple[int, int, int]:
        """Array shape ``(D, H, W)``."""
        W, H, D = self.dims
        return (D, H, W)

    @property
    def size(self) -> int:
        W, H, D = self.dims
        return W * H * D

    @classmethod
    def from_shape(cls, shape, spacing=(1.0, 1.0, 1.0)) -> "GridSpec":
        D, H, W = shape
        return cls((W, H, D), spacing)

    def linear_index(self, x: int, y: int, z: int) -> int:
        W, H, _ = self.dims
        return (z * H + y) * W + x

    def to_json(self) -> dict:
        return {"dims": list(self.dims), "spacing": list(self.spacing)}


def _check_shape(grid: GridSpec, arr: np.ndarray, what: str):
    if arr.shape != grid.shape:
        raise DataError(f"{what} has shape {arr.shape}, grid expects {grid.shape}")


@dataclass(frozen=True, eq=False)
class Volume:
    grid: GridSpec
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype.kind != "f":
            data = data.astype(np.float64)
        _check_shape(self.grid, data, "volume data")
        if not np.all(np.isfinite(data)):
            raise DataError("volume contains non-finite values")
        data = data.view()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, data, spacing=(1.0, 1.0, 1.0)) -> "Volume":
        data = np.asarray(data)
        return cls(GridSpec.from_shape(data.shape, spacing), data)


@dataclass(frozen=True, eq=False)
class LabelMap:
    grid: GridSpec
    labels: np.ndarray
    label_ids: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.dtype.kind == "f":
            if not np.all(labels == np.round(labels)):
                raise DataError("label map holds non-integer values")
            labels = labels.astype(np.int32)
        elif labels.dtype.kind not in "iub":
            raise DataError(f"unsupported label dtype {labels.dtype}")
        else:
            labels = labels.astype(np.int32, copy=False)
        _check_shape(self.grid, labels, "label map")
        if labels.size and labels.min() < 0:
            raise DataError("labels must be non-negative")
        labels = labels.view()
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        ids = tuple(int(i) for i in np.unique(labels) if i != 0)
        object.__setattr__(self, "label_ids", ids)

    @classmethod
    def from_array(cls, labels, spacing=(1.0, 1.0, 1.0)) -> "LabelMap":
        labels = np.asarray(labels)
        return cls(GridSpec.from_shape(labels.shape, spacing), labels)


def normalize_intensity(v: Volume) -> Volume:
    """Rescale linearly to [0, 1]; a constant volume becomes all zeros."""
    data = np.asarray(v.data, dtype=np.float64)
    lo, hi = data.min(), data.max()
    if hi == lo:
        return Volume(v.grid, np.zeros_like(data))
    return Volume(v.grid, np.clip((data - lo) / (hi - lo), 0.0, 1.0))


# -- file format --------------------------------------------------------------

def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".raw")


def write_raw(path, kind: str, grid: GridSpec, arr: np.ndarray) -> None:
    """Write ``arr`` (already in planar ``[..., z, y, x]`` order) as header + f32le raw."""
    if kind not in KINDS:
        raise DataError(f"unknown kind {kind!r}")
    header_path, raw_path = _paths(path)
    header = {"dims": list(grid.dims), "spacing": list(grid.spacing), "dtype": "f32le", "kind": kind}
    raw = np.ascontiguousarray(arr, dtype=RAW_DTYPE)
    try:
        header_path.parent.mkdir(parents=True, exist_ok=True)
        header_path.write_text(json.dumps(header, indent=2) + "\n")
        raw_path.write_bytes(raw.tobytes(order="C"))
    except OSError as exc:
        raise DataError(f"cannot write {header_path.with_suffix('')}: {exc}") from exc


def read_raw(path, expect_kind: str | None = None) -> tuple[str, GridSpec, np.ndarray]:
    header_path, raw_path = _paths(path)
    if not header_path.is_file():
        raise DataError(f"missing header file {header_path}")
    if not raw_path.is_file():
        raise DataError(f"missing raw file {raw_path}")
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"unreadable header {header_path}: {exc}") from exc
    if header.get("dtype", "f32le") != "f32le":
        raise DataError(f"unsupported dtype {header.get('dtype')!r}")
    kind = header.get("kind", "scalar")
    if kind not in KINDS:
        raise DataError(f"unknown kind {kind!r} in {header_path}")
    if expect_kind is not None and kind != expect_kind:
        raise DataError(f"{header_path} holds kind {kind!r}, expected {expect_kind!r}")
    grid = GridSpec(tuple(header["dims"]), tuple(header.get("spacing", (1.0, 1.0, 1.0))))
    ncomp = 3 if kind == "field" else 1
    expected = ncomp * grid.size
    nbytes = raw_path.stat().st_size
    if nbytes != expected * RAW_DTYPE.itemsize:
        raise DataError(
            f"length mismatch: {raw_path} holds {nbytes} bytes, "
            f"header dims {list(grid.dims)} need {expected * RAW_DTYPE.itemsize}"
        )
    arr = np.fromfile(raw_path, dtype=RAW_DTYPE).astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{raw_path} contains non-finite values")
    shape = grid.shape if ncomp == 1 else (3,) + grid.shape
    return kind, grid, arr.reshape(shape)


def load_volume(path) -> Volume:
    _, grid, arr = read_raw(path, "scalar")
    return Volume(grid, arr)


def save_volume(v: Volume, path) -> None:
    write_raw(path, "scalar", v.grid, v.data)


def load_labels(path) -> LabelMap:
    _, grid, arr = read_raw(path, "labels")
    return LabelMap(grid, arr)


def save_labels(lm: LabelMap, path) -> None:
    write_raw(path, "labels", lm.grid, lm.labels)
