import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airreg.deformation import DisplacementField, warp
from airreg.losses import (
    LossConfig, evaluate_arrays, lncc, lncc_array, loss_and_gradient, reg_gradient, reg_loss, reg_value,
    sim_loss, total_loss, total_loss_gradient,
)
from airreg.synth import phantom
from airreg.volume import DataError, GridSpec, NumericalError, Volume

from conftest import smooth_volume

seeds = st.integers(0, 2**32 - 1)


def _lncc_loop(I, J, window, eps):
    """Brute-force clipped-window LNCC, one voxel at a time."""
    r = window // 2
    out = np.empty(I.shape)
    D, H, W = I.shape
    for z in range(D):
        for y in range(H):
            for x in range(W):
                sl = (slice(max(z - r, 0), z + r + 1), slice(max(y - r, 0), y + r + 1), slice(max(x - r, 0), x + r + 1))
                a = I[sl] - I[sl].mean()
                b = J[sl] - J[sl].mean()
                out[z, y, x] = (a * b).sum() ** 2 / ((a * a).sum() * (b * b).sum() + eps)
    return out


def test_config_validation():
    for bad in (dict(window=4), dict(window=1), dict(epsilon=0.0), dict(lambda_reg=-1.0)):
        with pytest.raises(DataError):
            LossConfig(**bad)


@pytest.mark.parametrize("window", [3, 5, 9])
def test_lncc_matches_brute_force(window, rng):
    I = rng.random((6, 7, 5))
    J = 0.5 * I + rng.random(I.shape)
    np.testing.assert_allclose(lncc_array(I, J, window, 1e-5), _lncc_loop(I, J, window, 1e-5), atol=1e-10)


def test_lncc_of_identical_volumes_is_one(smooth16):
    cc = lncc(smooth16, smooth16).data
    assert np.all(np.abs(cc - 1.0) < 1e-4)


def test_lncc_constant_windows_give_zero():
    c = Volume.from_array(np.full((6, 6, 6), 3.0))
    d = Volume.from_array(np.full((6, 6, 6), -1.0))
    assert np.all(lncc(c, d).data == 0.0)


@settings(max_examples=20, deadline=None)
@given(seeds, st.floats(0.2, 5.0), st.floats(-10.0, 10.0), st.booleans())
def test_lncc_affine_invariance(seed, a, b, which):
    r = np.random.default_rng(seed)
    I = r.random((10, 10, 10))
    J = 0.6 * I + r.random(I.shape)
    base = lncc_array(I, J)
    mapped = lncc_array(a * I + b, J) if which else lncc_array(I, a * J + b)
    np.testing.assert_allclose(mapped, base, atol=1e-4)


@settings(max_examples=20, deadline=None)
@given(seeds, st.floats(0.0, 3.0))
def test_sim_loss_range(seed, mix):
    r = np.random.default_rng(seed)
    I = r.random((8, 9, 10))
    J = mix * I + r.random(I.shape)
    s = sim_loss(Volume.from_array(I), Volume.from_array(J))
    assert -1.0 - 1e-3 <= s <= 1e-6


@pytest.mark.parametrize("kind", ["sphere", "two-blob", "checker-smooth"])
def test_sim_of_phantom_with_itself(kind):
    img, _ = phantom(kind, GridSpec((32, 32, 32)))
    v = Volume.from_array(img)
    s = sim_loss(v, v)
    assert -1.0 - 1e-3 <= s <= -0.99


def test_sim_of_noise_against_ramp_is_small():
    shape = (32, 32, 32)
    ramp = np.indices(shape, dtype=float)[2]
    noise = np.random.default_rng(7).random(shape)
    s = sim_loss(Volume.from_array(noise), Volume.from_array(ramp))
    assert abs(s) < 0.2


def test_sim_is_mean_over_all_voxels(rng):
    I, J = rng.random((4, 5, 6)), rng.random((4, 5, 6))
    assert sim_loss(Volume.from_array(I), Volume.from_array(J)) == pytest.approx(-lncc_array(I, J).sum() / 120, abs=1e-15)


def test_sim_translation_consistency(smooth16, rng):
    J = smooth16.data + 0.3 * rng.random(smooth16.grid.shape)
    base = sim_loss(smooth16, Volume.from_array(J))
    shifted = sim_loss(Volume.from_array(smooth16.data + 7.5), Volume.from_array(J + 7.5))
    assert abs(shifted - base) < 1e-6


# -- regularizer --------------------------------------------------------------

def test_reg_zero_and_constant_fields():
    g = GridSpec((4, 5, 6))
    assert reg_loss(DisplacementField.zeros(g)) == 0.0
    assert reg_loss(DisplacementField.constant(g, 3.0, -1.0, 2.0)) == 0.0


def test_reg_hand_value_on_3_cubed():
    g = GridSpec((3, 3, 3))
    z, y, x = np.indices(g.shape, dtype=float)
    u = np.zeros((3,) + g.shape)
    u[0] = x
    # 9 rows along x, each with 2 unit forward differences
    assert reg_loss(DisplacementField(g, u)) == pytest.approx(18 / 27, abs=1e-15)
    assert reg_loss(DisplacementField(g, u), LossConfig(reg_normalize=False)) == 18.0


@settings(max_examples=30, deadline=None)
@given(seeds, st.booleans())
def test_reg_zero_iff_constant(seed, constant):
    r = np.random.default_rng(seed)
    g = GridSpec((3, 4, 3))
    if constant:
        f = DisplacementField.constant(g, *r.normal(size=3))
        assert reg_loss(f) == 0.0
    else:
        u = np.broadcast_to(r.normal(size=(3, 1, 1, 1)), (3,) + g.shape).copy()
        u[r.integers(3), r.integers(3), r.integers(4), r.integers(3)] += r.uniform(0.01, 1.0)
        assert reg_loss(DisplacementField(g, u)) > 0.0


@pytest.mark.parametrize("normalize", [True, False])
def test_reg_gradient_matches_finite_difference(normalize, rng):
    u = rng.normal(size=(3, 4, 5, 3))
    g = reg_gradient(u, normalize)
    h = 1e-6
    for _ in range(20):
        idx = tuple(int(rng.integers(n)) for n in u.shape)
        up, um = u.copy(), u.copy()
        up[idx] += h
        um[idx] -= h
        fd = (reg_value(up, normalize) - reg_value(um, normalize)) / (2 * h)
        assert g[idx] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_reg_gradient_of_constant_field_is_zero():
    u = np.empty((3, 4, 4, 4))
    u[:] = np.array([1.0, -2.0, 0.5])[:, None, None, None]
    assert np.all(reg_gradient(u) == 0.0)


# -- total loss ---------------------------------------------------------------

def test_total_decomposition_is_exact(smooth16, rng):
    f = DisplacementField(smooth16.grid, rng.normal(0, 0.5, (3,) + smooth16.grid.shape))
    fixed = Volume.from_array(smooth16.data[::-1].copy())
    for lam in (0.0, 0.3, 1.0, 7.0):
        cfg = LossConfig(lambda_reg=lam)
        warped = warp(smooth16, f)
        b = total_loss(warped, fixed, f, cfg)
        assert b.total == b.sim + lam * b.reg
        assert b.sim == sim_loss(warped, fixed, cfg)
        assert b.reg == reg_loss(f, cfg)
        if lam == 0.0:
            assert b.total == b.sim
        assert evaluate_arrays(smooth16.data, fixed.data, f.u, cfg) == b


def test_total_of_identical_pair_is_minus_one(smooth16):
    b = total_loss(smooth16, smooth16, DisplacementField.zeros(smooth16.grid))
    assert b.total == pytest.approx(-1.0, abs=1e-3)


# -- gradient -----------------------------------------------------------------

def _fd_check(moving, fixed, u, cfg, rng, probes=40, h=1e-3):
    _, grad = loss_and_gradient(moving, fixed, u, cfg)
    worst = 0.0
    for _ in range(probes):
        idx = tuple(int(rng.integers(n)) for n in u.shape)
        up, um = u.copy(), u.copy()
        up[idx] += h
        um[idx] -= h
        fd = (evaluate_arrays(moving, fixed, up, cfg).total - evaluate_arrays(moving, fixed, um, cfg).total) / (2 * h)
        worst = max(worst, abs(grad[idx] - fd) / max(abs(grad[idx]), abs(fd), 1e-12))
    return worst


@pytest.mark.parametrize("size, window, lam", [(12, 9, 1.0), (6, 5, 0.0), (4, 9, 2.0), (8, 3, 0.5)])
def test_gradient_matches_finite_differences(size, window, lam, rng):
    shape = (size,) * 3
    moving, fixed = rng.random(shape), rng.random(shape)
    # keep sample offsets away from cell edges where trilinear has kinks
    u = rng.integers(-2, 2, (3,) + shape) + rng.uniform(0.05, 0.95, (3,) + shape)
    assert _fd_check(moving, fixed, u, LossConfig(window=window, lambda_reg=lam), rng) <= 1e-4


def test_gradient_at_perfect_alignment_vanishes_inside():
    shape = (16, 16, 16)
    z, y, x = np.indices(shape, dtype=float)
    c = 7.5
    img = np.cos(0.4 * (x - c)) * np.cos(0.35 * (y - c)) * np.cos(0.3 * (z - c))
    _, g = loss_and_gradient(img, img, np.zeros((3,) + shape), LossConfig())
    assert np.max(np.abs(g[:, 2:-2, 2:-2, 2:-2])) < 1e-6


def test_reg_only_gradient_of_constant_field_is_zero():
    g = GridSpec((6, 6, 6))
    flat = Volume.from_array(np.full(g.shape, 2.0))
    f = DisplacementField.constant(g, 0.7, -0.2, 1.1)
    out = total_loss_gradient(flat, flat, f, LossConfig(lambda_reg=1e6))
    assert np.all(out.u == 0.0)


def test_gradient_breakdown_equals_evaluation(rng):
    shape = (8, 8, 8)
    m, f = rng.random(shape), rng.random(shape)
    u = rng.normal(0, 1, (3,) + shape)
    cfg = LossConfig()
    assert loss_and_gradient(m, f, u, cfg)[0] == evaluate_arrays(m, f, u, cfg)


def test_non_finite_input_raises_numerical_error():
    shape = (5, 5, 5)
    m = np.ones(shape)
    m[2, 2, 2] = np.inf
    with pytest.raises(NumericalError):
        loss_and_gradient(m, np.random.default_rng(0).random(shape), np.zeros((3,) + shape), LossConfig())


def test_smooth_volume_windows_are_non_constant():
    v = smooth_volume((16, 16, 16))
    assert sim_loss(Volume.from_array(v), Volume.from_array(v)) <= -0.99
