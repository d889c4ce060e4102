from __future__ import annotations

import numpy as np
import pytest

from delayios.certify import random_histories
from delayios.dde import SimConfig, get_model, model_from_dsl, simulate, simulate_batch
from delayios.errors import BlowUp, ConfigError, ConfigMismatch
from delayios.signals import HistorySegment, InputSignal


def _linear_closed_form(t):
    # x' = -x(t - 1/2), xi = 1: piecewise polynomial on [0, 1.5]
    if t <= 0.5:
        return 1 - t
    if t <= 1.0:
        s = t - 0.5
        return 0.5 - s + s * s / 2
    s = t - 1.0
    return 0.125 - 0.5 * s + s * s / 2 - s**3 / 6


def test_linear_dde_matches_closed_form():
    m = get_model("linear-dde", 0.5)
    tr = simulate(m, HistorySegment.constant(0.5, 32, [1.0]), InputSignal.zero(1, 1.5), SimConfig(1.5, 32))
    expect = np.array([_linear_closed_form(t) for t in tr.times])
    np.testing.assert_allclose(tr.states[:, 0], expect, atol=1e-12)


def test_fourth_order_on_smooth_history():
    # smooth right-hand side; the window sup norm would cap the order at two
    m = model_from_dsl({"n": 2, "theta": 0.5, "f": ["-xd1 + 0.5 * sin(x2)", "-x2 + xd1 * xd2 + u1"], "h0": ["x1"]})
    xi_fn = lambda s: [np.cos(3 * s), np.sin(s)]

    def final(N):
        xi = HistorySegment.from_function(0.5, N, xi_fn)
        return simulate(m, xi, InputSignal.constant([0.3], 4.0), SimConfig(4.0, N)).states[-1]

    ref = final(512)
    e1 = np.linalg.norm(final(16) - ref)
    e2 = np.linalg.norm(final(32) - ref)
    assert 10 < e1 / e2 < 24


def test_linear_history_option_is_exact_for_piecewise_linear_history():
    # x' = x(t - theta) integrates the history exactly on [0, theta]
    m = model_from_dsl({"n": 1, "theta": 1.0, "f": ["xd1"], "h0": ["x1"]})
    N = 8
    xi = np.interp(np.arange(N + 1), [0, 3, 4, 8], [0.0, 2.0, -1.0, 0.5])[:, None, None]
    lin = simulate_batch(m, xi, SimConfig(1.0, N, history_interp="linear"))
    exact = xi[-1, 0, 0] + np.trapezoid(xi[:, 0, 0], dx=1.0 / N)
    assert lin.states[-1, 0, 0] == pytest.approx(exact, abs=1e-13)
    her = simulate_batch(m, xi, SimConfig(1.0, N))
    assert abs(her.states[-1, 0, 0] - exact) > 1e-6


def test_batch_members_match_single_runs():
    m = get_model("ex-redef", 0.5)
    N = 16
    xi = random_histories(np.random.default_rng(1), 5, 1.5, N, 3)
    U = np.random.default_rng(2).uniform(-1, 1, (32, 5, 1))
    cfg = SimConfig(1.0, N)
    batch = simulate_batch(m, xi, cfg, inputs=U)
    for i in range(5):
        one = simulate_batch(m, xi[:, i : i + 1], cfg, inputs=U[:, i : i + 1])
        np.testing.assert_array_equal(one.full[:, 0], batch.full[:, i])


def test_dsl_model_reproduces_builtin():
    dsl = model_from_dsl('{"n": 1, "m": 1, "theta": 0.5, "f": ["-xd1 + u1"], "h0": ["x1"]}')
    ref = get_model("linear-dde", 0.5)
    xi = HistorySegment.constant(0.5, 16, [0.7])
    u = InputSignal([0.0, 0.8], [[0.2], [-0.4]], 3.0)
    a = simulate(dsl, xi, u, SimConfig(3.0, 16))
    b = simulate(ref, xi, u, SimConfig(3.0, 16))
    np.testing.assert_allclose(a.states, b.states, rtol=0, atol=1e-15)


def test_dsl_rejects_unsafe_or_invalid_expressions():
    with pytest.raises(ConfigError):
        model_from_dsl({"n": 1, "theta": 1, "f": ["__import__('os')"], "h0": ["x1"]})
    with pytest.raises(ConfigError):
        model_from_dsl({"n": 1, "theta": 1, "f": ["x2"], "h0": ["x1"]})
    with pytest.raises(ConfigError):
        model_from_dsl({"n": 1, "theta": 1, "f": ["-x1"], "h0": ["xd1"]})
    with pytest.raises(ConfigError) as exc:
        model_from_dsl({"n": 1, "f": ["-x1"], "h0": ["x1"]})
    assert exc.value.key == "model.theta"


def test_dsl_window_functionals():
    m = model_from_dsl({"n": 1, "theta": 1.0, "f": ["0 * x1"], "h": ["norm", "wmax1", "xd1"]})
    N = 4
    xi = HistorySegment(1.0, np.array([[-3.0], [1.0], [0.5], [0.2], [0.1]]))
    tr = simulate(m, xi, InputSignal.zero(1, 0.0), SimConfig(0.0, N))
    np.testing.assert_allclose(tr.outputs[0], [3.0, 3.0, -3.0])


def test_blow_up_is_reported():
    m = model_from_dsl({"n": 1, "theta": 1.0, "f": ["x1 ** 2"], "h0": ["x1"]})
    with pytest.raises(BlowUp) as exc:
        simulate(m, HistorySegment.constant(1.0, 64, [1.0]), None, SimConfig(2.0, 64, b_max=1e6))
    assert 0.9 < exc.value.t < 1.05


def test_grid_mismatches_raise():
    m = get_model("linear-dde", 0.5)
    with pytest.raises(ConfigMismatch):
        SimConfig(0.3, 4).n_steps(0.5)
    with pytest.raises(ConfigMismatch):
        simulate(m, HistorySegment.constant(0.5, 8, [1.0]), None, SimConfig(1.0, 16))
    with pytest.raises(ConfigMismatch):
        simulate(m, HistorySegment.constant(0.4, 16, [1.0]), None, SimConfig(0.8, 16))
    with pytest.raises(ConfigMismatch):
        SimConfig(1.0, 8, history_interp="spline")


def test_model_registry():
    with pytest.raises(ConfigError) as exc:
        get_model("unknown")
    assert exc.value.key == "model"
    with pytest.raises(ConfigError):
        get_model("ex-raz", output="z")
    m = get_model("ex-redef", output="W2")
    xi = np.zeros((9, 1, 3))
    xi[-1, 0] = [5.0, 1.0, 1.0]
    assert m.output_norm0(xi)[0] == pytest.approx(1.0)
    assert m.delay_free


def test_zero_output_samplers_give_zero_output():
    rng = np.random.default_rng(0)
    for name, out in (("ex-redef", "x3"), ("ex-redef", "W2"), ("ex-raz", "x"), ("linear-dde", None)):
        m = get_model(name, output=out)
        xi = m.zero_output_sampler(rng, 10, 2.0, 16)
        assert np.max(m.output_norm0(xi)) == 0.0
