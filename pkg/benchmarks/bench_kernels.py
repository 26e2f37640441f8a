"""Time the numba kernels against the numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--sizes 32 64] [--repeat 5]

Kernels are timed in-process through both backend modules. The full
loss-and-gradient step picks its backend at import, so it runs in a child
process per backend with ``AIR_DISABLE_NUMBA`` set accordingly.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from airreg.kernels import _numba, _numpy

_CHILD = """
import json, sys, timeit
import numpy as np
from airreg import kernels
from airreg.losses import LossConfig, loss_and_gradient
n, repeat = int(sys.argv[1]), int(sys.argv[2])
rng = np.random.default_rng(0)
m, f = rng.random((n, n, n)), rng.random((n, n, n))
u = rng.normal(0, 1.5, (3, n, n, n))
cfg = LossConfig()
loss_and_gradient(m, f, u, cfg)
best = min(timeit.repeat(lambda: loss_and_gradient(m, f, u, cfg), number=1, repeat=repeat))
print(json.dumps({"backend": kernels.BACKEND, "seconds": best}))
"""


def _best(fn, repeat):
    fn()  # compile / warm
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_rows(n, repeat):
    rng = np.random.default_rng(0)
    img = rng.random((n, n, n))
    uz, uy, ux = rng.normal(0, 1.5, (3, n, n, n))
    p, g = rng.random(3 * n**3), rng.random(3 * n**3)
    cases = {
        "trilinear": lambda k: k.trilinear(img, uz, uy, ux),
        "trilinear_grad": lambda k: k.trilinear_grad(img, uz, uy, ux),
        "box_sum r=4": lambda k: k.box_sum(img, 4),
        "adam_update": lambda k: k.adam_update(p.copy(), g, np.zeros_like(p), np.zeros_like(p),
                                               0.1, 0.9, 0.999, 1e-8, 0.1, 0.001),
    }
    for name, call in cases.items():
        t_np = _best(lambda: call(_numpy), repeat)
        t_nb = _best(lambda: call(_numba), repeat)
        yield name, n, t_np, t_nb


def loss_row(n, repeat):
    times = {}
    for flag in ("1", "0"):
        env = dict(os.environ, AIR_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", _CHILD, str(n), str(repeat)], env=env,
                             capture_output=True, text=True, check=True).stdout
        rec = json.loads(out.strip().splitlines()[-1])
        times[rec["backend"]] = rec["seconds"]
    return "loss_and_gradient", n, times["numpy"], times["numba"]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    print(f"{'kernel':<20}{'size':>6}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for n in args.sizes:
        for name, size, t_np, t_nb in [*kernel_rows(n, args.repeat), loss_row(n, args.repeat)]:
            print(f"{name:<20}{size:>6}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
