import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airreg.deformation import DisplacementField, warp
from airreg.losses import LossConfig, evaluate_arrays, total_loss
from airreg.optim import AdamState, adam_step, adam_update_, optimize_arrays, optimize_pair
from airreg.synth import Deform, PhantomSpec, generate_pair
from airreg.volume import DataError, GridSpec, NumericalError, Volume


def _adam_oracle(x0, grad_fn, steps, lr=0.1, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam written out from the textbook recurrence in plain floats."""
    x, m, v = x0, 0.0, 0.0
    xs = []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        x = x - lr * m_hat / (math.sqrt(v_hat) + eps)
        xs.append(x)
    return xs


def test_first_step_on_x_squared():
    x = np.array([1.0])
    adam_update_(x, np.array([2.0]), AdamState.for_shape((1,)))
    # at t=1, m_hat = g and sqrt(v_hat) = |g|
    assert x[0] == 1.0 - 0.1 * 2.0 / (2.0 + 1e-8)
    assert x[0] == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), abs=1e-9)
    assert abs(1.0 - x[0]) == pytest.approx(0.1, rel=1e-7)


@pytest.mark.parametrize("a, b, x0, lr", [(1.0, 0.0, 1.0, 0.1), (3.0, -2.0, 5.0, 0.05), (0.01, 4.0, -1.0, 0.3)])
def test_quadratic_probe_matches_oracle(a, b, x0, lr):
    # f(x) = a (x - b)^2
    grad_fn = lambda x: 2 * a * (x - b)  # noqa: E731
    expected = _adam_oracle(x0, grad_fn, 100, lr=lr)
    x = np.array([x0])
    state = AdamState.for_shape((1,), lr=lr)
    for t in range(100):
        adam_update_(x, np.array([grad_fn(x[0])]), state)
        assert abs(x[0] - expected[t]) <= 1e-12
    assert state.t == 100


def test_vector_of_probes_matches_oracle():
    a = np.array([0.5, 1.0, 2.0, 4.0])
    b = np.array([1.0, -1.0, 0.25, 3.0])
    x = np.zeros(4)
    state = AdamState.for_shape((4,))
    for _ in range(100):
        adam_update_(x, 2 * a * (x - b), state)
    for i in range(4):
        ref = _adam_oracle(0.0, lambda s, i=i: 2 * a[i] * (s - b[i]), 100)[-1]
        assert abs(x[i] - ref) <= 1e-12


def test_zero_gradient_leaves_params_unchanged(rng):
    p0 = rng.normal(size=(3, 2, 2, 2))
    p = p0.copy()
    state = AdamState.for_shape(p.shape)
    for _ in range(25):
        adam_update_(p, np.zeros_like(p), state)
        np.testing.assert_array_equal(p, p0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=60), st.floats(1e-3, 1e3), st.floats(1e-3, 1.0))
def test_sign_flip_steps_bounded_by_lr(signs, mag, lr):
    x = np.zeros(1)
    state = AdamState.for_shape((1,), lr=lr)
    for s in signs:
        before = x[0]
        adam_update_(x, np.array([mag if s else -mag]), state)
        assert abs(x[0] - before) <= lr * (1 + 1e-12)


def test_state_invariants_and_errors(rng):
    p = np.zeros((2, 3))
    state = AdamState.for_shape(p.shape)
    for k in range(1, 4):
        adam_update_(p, rng.normal(size=p.shape), state)
        assert state.t == k
        assert np.all(state.v >= 0)
    with pytest.raises(DataError):
        adam_update_(p, np.zeros((3, 2)), state)
    bad = np.zeros(p.shape)
    bad[1, 2] = np.nan
    with pytest.raises(NumericalError, match=r"\(1, 2\)"):
        adam_update_(p, bad, state)
    with pytest.raises(DataError):
        AdamState.for_shape((2,), lr=0.0)
    with pytest.raises(DataError):
        AdamState.for_shape((2,), beta1=1.0)


def test_adam_step_returns_new_field(rng):
    g = GridSpec((3, 3, 3))
    params = DisplacementField(g, rng.normal(size=(3,) + g.shape))
    grad = DisplacementField(g, rng.normal(size=(3,) + g.shape))
    state = AdamState.for_shape(params.u.shape)
    out = adam_step(params, grad, state)
    assert state.t == 1
    np.testing.assert_allclose(np.abs(out.u - params.u), 0.1, rtol=1e-6)


# -- optimize_pair ------------------------------------------------------------

def _shifted_sphere(n=24, shift=(1.5, 0.0, 0.0)):
    spec = PhantomSpec(grid=GridSpec((n, n, n)), kind="sphere", deform=Deform("translation", vector=shift), seed=0)
    moving, fixed, *_ = generate_pair(spec)
    return moving, fixed


def test_trace_starts_at_total_loss_of_init(rng):
    moving, fixed = _shifted_sphere(16)
    init = DisplacementField(moving.grid, rng.normal(0, 0.3, (3,) + moving.grid.shape))
    cfg = LossConfig()
    _, _, rep = optimize_pair(moving, fixed, init, 5, 0.1, cfg)
    assert len(rep.loss_trace) == rep.steps_run + 1 == 6
    assert rep.loss_trace[0] == total_loss(warp(moving, init), fixed, init, cfg)
    assert rep.initial_total == rep.loss_trace[0].total


def test_identical_pair_stays_near_zero(smooth16):
    zero = DisplacementField.zeros(smooth16.grid)
    phi, _, rep = optimize_pair(smooth16, smooth16, zero, 15, 0.1)
    # Adam moves about lr per step once |g| passes eps, so the field jitters at that scale
    assert np.max(np.abs(phi.u)) < 0.15
    assert rep.initial_total == pytest.approx(-1.0, abs=1e-3)
    assert rep.final_total == pytest.approx(rep.initial_total, abs=1e-2)


@pytest.mark.xfail(strict=True, reason="Adam is scale invariant: residual gradients near 1e-8 already give steps near lr")
def test_identical_pair_field_bound_of_five_hundredths(smooth16):
    phi, _, _ = optimize_pair(smooth16, smooth16, DisplacementField.zeros(smooth16.grid), 15, 0.1)
    assert np.max(np.abs(phi.u)) < 0.05


def test_shifted_sphere_strictly_decreases_and_is_deterministic():
    moving, fixed = _shifted_sphere()
    zero = DisplacementField.zeros(moving.grid)
    phi1, warped1, rep1 = optimize_pair(moving, fixed, zero, 100, 0.1)
    phi2, warped2, rep2 = optimize_pair(moving, fixed, zero, 100, 0.1)
    assert rep1.final_total < rep1.initial_total
    assert phi1.u.tobytes() == phi2.u.tobytes()
    assert warped1.data.tobytes() == warped2.data.tobytes()
    assert [b.total for b in rep1.loss_trace] == [b.total for b in rep2.loss_trace]
    np.testing.assert_array_equal(warped1.data, warp(moving, phi1).data)


def test_zero_gradient_pair_is_identity_on_field():
    g = GridSpec((6, 6, 6))
    flat = Volume(g, np.full(g.shape, 1.0))
    init = DisplacementField.constant(g, 0.3, -0.2, 0.1)
    phi, _, _ = optimize_pair(flat, flat, init, 10, 0.1)
    np.testing.assert_array_equal(phi.u, init.u)


def test_optimizer_rejects_zero_steps(smooth16):
    with pytest.raises(DataError):
        optimize_pair(smooth16, smooth16, DisplacementField.zeros(smooth16.grid), 0, 0.1)


def test_non_finite_loss_reports_step():
    shape = (6, 6, 6)
    m = np.ones(shape)
    m[3, 3, 3] = np.nan
    with pytest.raises(NumericalError, match="step 0"):
        optimize_arrays(m, np.ones(shape), np.zeros((3,) + shape), 3, 0.1, LossConfig())


def test_report_json_shape(smooth16):
    _, _, rep = optimize_pair(smooth16, smooth16, DisplacementField.zeros(smooth16.grid), 2, 0.1)
    d = rep.to_json()
    assert d["steps_run"] == 2 and len(d["loss_trace"]) == 3
    assert set(d["loss_trace"][0]) == {"sim", "reg", "total"}
    assert d["final_total"] == evaluate_arrays(smooth16.data, smooth16.data,
                                               optimize_pair(smooth16, smooth16, DisplacementField.zeros(smooth16.grid), 2, 0.1)[0].u,
                                               LossConfig()).total
