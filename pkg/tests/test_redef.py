from __future__ import annotations

import math

import numpy as np
import pytest

from delayios.dde import SimConfig, get_model, simulate
from delayios.errors import ConfigError, NoCertificate
from delayios.funclib import KLFunction, parse_function, parse_kl
from delayios.redef import RedefinitionSpec, SearchSpec, estimate_hbar, level_table
from delayios.signals import HistorySegment, InputSignal

N = 16
BETA = KLFunction(lambda r, t: 2 * r * np.exp(-t / (4 * (1 + 1.5 * r**2))), "ex-redef beta")
GAMMA = parse_function(f"linear:{2 * math.sqrt(2)}")
LIGHT = dict(segments=2, magnitudes=3, restarts=1, sweeps=1, max_rounds=2, steps_per_delay=N, t_cap=10.0)


def test_zero_initial_output_gets_positive_redefined_value():
    m = get_model("ex-redef", 0.5)
    xi = HistorySegment.constant(0.5, N, [0.0, 1.0, 0.0])
    est = estimate_hbar(m, xi, RedefinitionSpec(BETA, GAMMA, SearchSpec(**LIGHT)))
    assert est.h_norm == 0.0
    assert est.value > 0.1
    assert est.lower <= est.upper
    assert est.upper == pytest.approx(float(BETA(xi.sup_norm, 0.0)))


def test_maximizer_replays_to_reported_value():
    m = get_model("ex-redef", 0.5)
    xi = HistorySegment.constant(0.5, N, [0.5, 1.0, 0.2])
    est = estimate_hbar(m, xi, RedefinitionSpec(BETA, GAMMA, SearchSpec(**LIGHT)))
    T = est.t_star
    u = InputSignal(est.u_star.breakpoints, est.u_star.levels, max(T, est.u_star.horizon))
    tr = simulate(m, xi, u, SimConfig(T, N))
    replay = abs(tr.outputs[-1, 0]) - float(GAMMA(u.sup_norm(0.0, T)))
    assert replay == pytest.approx(est.value, abs=1e-12)


def test_more_restarts_never_lower_the_estimate():
    m = get_model("ex-redef", 0.5)
    xi = HistorySegment.constant(0.5, N, [1.0, 0.6, -0.3])
    base = dict(LIGHT, magnitudes=5)
    a = estimate_hbar(m, xi, RedefinitionSpec(BETA, GAMMA, SearchSpec(**dict(base, restarts=1)))).value
    b = estimate_hbar(m, xi, RedefinitionSpec(BETA, GAMMA, SearchSpec(**dict(base, restarts=3)))).value
    assert b >= a


def test_delay_free_value_is_initial_output():
    m = get_model("delay-free-lin")
    spec = RedefinitionSpec(parse_kl("exp-kl:2,1"), parse_function("linear:2"), SearchSpec(steps_per_delay=N))
    xi = HistorySegment.from_function(1.0, N, lambda s: [np.cos(4 * s) - 0.3])
    est = estimate_hbar(m, xi, spec)
    assert est.value == pytest.approx(abs(xi.current[0]), abs=1e-12)


def test_certificate_and_grid_are_required():
    with pytest.raises(NoCertificate):
        RedefinitionSpec(None, GAMMA)
    m = get_model("ex-redef", 0.5)
    spec = RedefinitionSpec(BETA, GAMMA, SearchSpec(**LIGHT))
    with pytest.raises(ConfigError) as exc:
        estimate_hbar(m, HistorySegment.constant(0.5, 8, [0.0, 0.0, 0.0]), spec)
    assert exc.value.key == "steps_per_delay"
    with pytest.raises(ConfigError):
        SearchSpec(magnitudes=1)


def test_level_table():
    t = level_table(1, 3, 8)
    np.testing.assert_allclose(sorted(t.ravel()), [-1, -0.5, 0, 0.5, 1])
    t = level_table(2, 2, 4)
    assert t.shape == (5, 2)
    assert np.allclose(np.linalg.norm(t[1:], axis=1), 1.0)


def test_difference_quotients_on_delay_free_model():
    from delayios.certify import random_histories
    from delayios.redef import hbar_difference_quotients

    m = get_model("delay-free-lin")
    spec = RedefinitionSpec(parse_kl("exp-kl:2,1"), parse_function("linear:2"), SearchSpec(steps_per_delay=8))
    xis = random_histories(np.random.default_rng(0), 6, 1.0, 8, 1)
    out = hbar_difference_quotients(m, xis, spec)
    # h_bar = |xi(0)| is 1-Lipschitz in the sup norm
    assert out["pairs"] == 15
    assert out["max"] <= 1.0 + 1e-12
