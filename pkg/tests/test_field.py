import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ar4d.field import (
    AdamState,
    LrSchedule,
    MlpParams,
    OptimizerDivergenceError,
    PositionalEncodingConfig,
    adam_step,
    init_mlp,
    lr_at,
    mlp_backward,
    mlp_forward,
    positional_encode,
    positional_encode_backward,
)
from ar4d.gradcheck import audit_mlp


def test_encoding_of_zero():
    out = positional_encode(np.zeros(3), PositionalEncodingConfig(2))
    np.testing.assert_array_equal(out, [0, 1, 0, 1] * 3)


def test_encoding_of_pi():
    out = positional_encode([math.pi, 0, 0], PositionalEncodingConfig(1))
    np.testing.assert_allclose(out[:2], [0, -1], atol=1e-12)


def test_encoding_length():
    cfg = PositionalEncodingConfig(10)
    assert positional_encode(np.random.default_rng(0).normal(size=3), cfg).shape == (60,)
    assert cfg.output_dim() == 60
    assert PositionalEncodingConfig(10, include_input=True).output_dim() == 63


def test_encoding_includes_raw_input_first():
    x = np.array([0.3, -0.2, 5.0])
    out = positional_encode(x, PositionalEncodingConfig(3, include_input=True))
    np.testing.assert_array_equal(out[:3], x)


def test_encoding_frequency_layout():
    x = np.array([0.7, 0.0, 0.0])
    out = positional_encode(x, PositionalEncodingConfig(4))
    expected = []
    for j in range(4):
        expected += [math.sin(2**j * 0.7), math.cos(2**j * 0.7)]
    np.testing.assert_allclose(out[:8], expected, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3))
def test_encoding_bounded(x):
    out = positional_encode(np.array(x), PositionalEncodingConfig(10))
    assert np.all(np.abs(out) <= 1.0)


def test_encoding_backward_matches_finite_differences():
    rng = np.random.default_rng(1)
    cfg = PositionalEncodingConfig(5, include_input=True)
    x = rng.normal(size=(4, 3))
    d_enc = rng.normal(size=(4, cfg.output_dim()))
    analytic = positional_encode_backward(x, d_enc, cfg)
    h = 1e-6
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        num = (np.sum(positional_encode(xp, cfg) * d_enc) - np.sum(positional_encode(xm, cfg) * d_enc)) / (2 * h)
        assert analytic[idx] == pytest.approx(num, rel=1e-6, abs=1e-8)


def test_zero_weights_output_equals_bias():
    params = init_mlp(5, 3, depth=2, width=8, rng=0)
    params.weights = [np.zeros_like(w) for w in params.weights]
    params.biases[-1] = np.array([0.1, -0.2, 0.3])
    out, _ = mlp_forward(params, np.random.default_rng(1).normal(size=(7, 5)))
    np.testing.assert_array_equal(out, np.tile([0.1, -0.2, 0.3], (7, 1)))


def test_single_linear_layer_matches_matmul():
    rng = np.random.default_rng(2)
    W, b = rng.normal(size=(3, 5)), rng.normal(size=3)
    params = MlpParams([W], [b])
    x = rng.normal(size=5)
    out, _ = mlp_forward(params, x)
    expected = np.array([sum(W[i, j] * x[j] for j in range(5)) + b[i] for i in range(3)])
    np.testing.assert_allclose(out, expected, rtol=1e-14)
    d_out = rng.normal(size=3)
    _, d_x = mlp_backward(params, _, d_out)
    np.testing.assert_array_equal(d_x, W.T @ d_out)


def test_forward_deterministic():
    params = init_mlp(6, 9, rng=3, zero_output=False)
    x = np.random.default_rng(4).normal(size=(10, 6))
    a, _ = mlp_forward(params, x)
    b, _ = mlp_forward(params, x)
    np.testing.assert_array_equal(a, b)


def test_forward_rejects_wrong_input_dim():
    with pytest.raises(ValueError):
        mlp_forward(init_mlp(6, 9, rng=0), np.zeros(5))


def test_zero_upstream_zero_gradients():
    params = init_mlp(6, 4, depth=2, width=8, rng=5, zero_output=False)
    _, cache = mlp_forward(params, np.random.default_rng(6).normal(size=(3, 6)))
    grads, d_x = mlp_backward(params, cache, np.zeros((3, 4)))
    assert all(np.all(g == 0) for g in grads.arrays())
    assert np.all(d_x == 0)


def test_backward_rejects_stale_cache():
    params = init_mlp(6, 4, depth=2, width=8, rng=5)
    _, cache = mlp_forward(params, np.zeros((3, 6)))
    with pytest.raises(ValueError):
        mlp_backward(params, cache, np.zeros((2, 4)))


@pytest.mark.parametrize("seed", range(20))
def test_mlp_gradients_match_finite_differences(seed):
    result = audit_mlp(seed)
    assert result.fraction_ok == 1.0
    assert result.max_rel_error < 1e-4


def test_init_zero_output_layer_and_he_bounds():
    params = init_mlp(60, 9, depth=4, width=64, rng=7)
    assert params.dims == [60, 64, 64, 64, 64, 9]
    assert np.all(params.weights[-1] == 0)
    assert np.abs(params.weights[0]).max() <= math.sqrt(6 / 60)
    assert all(np.all(b == 0) for b in params.biases)


def test_adam_zero_gradients_leave_params():
    params = [np.array([1.0, 2.0]), np.array([[3.0]])]
    state = AdamState.for_params(params)
    out, state = adam_step(params, [np.zeros(2), np.zeros((1, 1))], state, 0.1)
    for a, b in zip(out, params):
        np.testing.assert_array_equal(a, b)
    assert state.t == 1


@pytest.mark.parametrize("g", [3.0, -0.01])
def test_adam_first_step_magnitude(g):
    state = AdamState.for_params([np.zeros(1)])
    (out,), _ = adam_step([np.zeros(1)], [np.array([g])], state, 1e-3)
    assert out[0] == pytest.approx(-math.copysign(1e-3, g), rel=1e-5)


def _reference_adam_trace(x0, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    # bias correction folded into the step size, the other common way to write Adam
    x, m, v, trace = x0, 0.0, 0.0, []
    for t in range(1, steps + 1):
        g = x  # gradient of x^2 / 2
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        step = lr * math.sqrt(1 - b2**t) / (1 - b1**t)
        x = x - step * m / (math.sqrt(v) + eps * math.sqrt(1 - b2**t))
        trace.append(x)
    return trace


def test_adam_matches_reference_trace_on_quadratic():
    x = [np.array([1.0])]
    state = AdamState.for_params(x)
    trace = []
    for _ in range(100):
        x, state = adam_step(x, [x[0].copy()], state, 0.05)
        trace.append(x[0][0])
    np.testing.assert_allclose(trace, _reference_adam_trace(1.0, 0.05, 100), atol=1e-10, rtol=0)


def test_adam_nan_gradient_raises():
    state = AdamState.for_params([np.zeros(2)])
    with pytest.raises(OptimizerDivergenceError):
        adam_step([np.zeros(2)], [np.array([0.0, np.nan])], state, 0.1)


def test_adam_per_array_learning_rates():
    params = [np.zeros(1), np.zeros(1)]
    state = AdamState.for_params(params)
    out, _ = adam_step(params, [np.ones(1), np.ones(1)], state, [1e-3, 1e-1])
    assert out[0][0] == pytest.approx(-1e-3, rel=1e-5)
    assert out[1][0] == pytest.approx(-1e-1, rel=1e-5)


def test_lr_endpoints_and_midpoint():
    sched = LrSchedule(5e-4, 1e-6, 2000)
    assert lr_at(sched, 0) == pytest.approx(5e-4, rel=1e-15)
    assert lr_at(sched, 2000) == pytest.approx(1e-6, rel=1e-12)
    assert lr_at(sched, 1000) == pytest.approx(math.sqrt(5e-4 * 1e-6), rel=1e-12)
    assert lr_at(sched, 1000) == pytest.approx(2.236e-5, rel=1e-3)


def test_lr_clamped_outside_range():
    sched = LrSchedule(5e-4, 1e-6, 100)
    assert lr_at(sched, -5) == lr_at(sched, 0)
    assert lr_at(sched, 10_000) == lr_at(sched, 100)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 3000), st.integers(0, 3000))
def test_lr_nonincreasing(a, b):
    sched = LrSchedule(5e-4, 1e-6, 2000)
    lo, hi = sorted((a, b))
    assert lr_at(sched, hi) <= lr_at(sched, lo)


def test_lr_schedule_validates_order():
    with pytest.raises(ValueError):
        LrSchedule(1e-6, 5e-4, 10)
