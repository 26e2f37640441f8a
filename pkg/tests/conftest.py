import re

import numpy as np
import pytest

from airreg.volume import GridSpec, Volume


def smooth_volume(shape, seed=0, waves=3):
    """Sum of a few low-frequency cosines; non-constant in every 9-voxel window."""
    rng = np.random.default_rng(seed)
    z, y, x = np.indices(shape, dtype=np.float64)
    out = np.zeros(shape)
    for _ in range(waves):
        kz, ky, kx = rng.uniform(0.15, 0.45, 3)
        out += np.cos(kz * z + ky * y + kx * x + rng.uniform(0, 2 * np.pi))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid16():
    return GridSpec((16, 16, 16))


@pytest.fixture
def smooth16():
    return Volume.from_array(smooth_volume((16, 16, 16)))


_CRITERION = re.compile(r"test_criterion_(\d+)")


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = _CRITERION.search(getattr(rep, "nodeid", ""))
            if not m or rep.when not in ("call", "setup"):
                continue
            if rep.when == "setup" and outcome == "passed":
                continue
            detail = dict(rep.user_properties).get("detail", "")
            lines.append((int(m.group(1)), "PASS" if outcome == "passed" else "FAIL", detail))
    if lines:
        terminalreporter.section("acceptance criteria")
        for k, status, detail in sorted(lines):
            terminalreporter.write_line(f"criterion {k}: {status}  {detail}")
