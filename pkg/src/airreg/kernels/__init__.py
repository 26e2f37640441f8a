"""Voxel kernels with a numba fast path.

Set ``AIR_DISABLE_NUMBA=1`` before import to force the pure-numpy path. The
numpy path is also used when numba is not importable.
"""

import os

from . import _numpy

BACKEND = "numpy"
_impl = _numpy

if os.environ.get("AIR_DISABLE_NUMBA", "").strip().lower() not in ("1", "true", "yes"):
    try:
        from . import _numba
    except ImportError:  # pragma: no cover - numba is a declared dependency
        pass
    else:
        _impl = _numba
        BACKEND = "numba"

trilinear = _impl.trilinear
trilinear_grad = _impl.trilinear_grad
nearest = _impl.nearest
box_sum = _impl.box_sum
adam_update = _impl.adam_update

__all__ = ["BACKEND", "trilinear", "trilinear_grad", "nearest", "box_sum", "adam_update"]
