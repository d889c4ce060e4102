from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delayios.errors import ConfigError, EmptySampleSet, UnreachableTarget
from delayios.funclib import (
    LOG_GRID,
    build_rfc_envelope,
    identity,
    inverse_function,
    invert,
    isotonic_increasing,
    margin_exact,
    parse_function,
    parse_kl,
    pointwise_max,
    power_map,
    sontag_factorize,
    synthesize_margin,
    table_function,
)

SPECS = ["linear:2", "power:3", "power:0.5,2", "sqrt:1", "poly:1,0.5,0.1", "log1p:2", "rlog1p", "id"]


@pytest.mark.parametrize("spec", SPECS)
def test_registry_functions_are_class_k(spec):
    f = parse_function(spec)
    v = f(LOG_GRID)
    assert f(0.0) == 0.0
    assert np.all(np.diff(v) > 0)
    assert f.validate()


@pytest.mark.parametrize("spec", SPECS)
def test_invert_round_trip(spec):
    f = parse_function(spec)
    x = np.logspace(-4, 4, 50)
    back = invert(f, f(x), use_closed_form=False)
    np.testing.assert_allclose(back, x, rtol=1e-9)


def test_invert_refuses_out_of_range_target():
    sat = parse_function("sat:1,1")
    with pytest.raises(UnreachableTarget):
        invert(sat, 2.0)
    with pytest.raises(UnreachableTarget):
        invert(identity(), -1.0)


def test_registry_errors_name_the_key():
    with pytest.raises(ConfigError) as exc:
        parse_function("nope:1", "sigma")
    assert exc.value.key == "sigma"
    with pytest.raises(ConfigError):
        parse_function("linear:-1")
    with pytest.raises(ConfigError):
        parse_kl("exp-kl:1", "beta")


def test_kl_functions():
    b = parse_kl("exp-kl:2,0.5,2")
    assert b(3.0, 0.0) == pytest.approx(18.0)
    assert b(3.0, 2.0) == pytest.approx(18.0 * np.exp(-1.0))
    assert b.validate()
    assert parse_kl("rational-kl:1,2")(2.0, 1.0) == pytest.approx(0.5)


def test_pointwise_max_and_inverse_function():
    f = pointwise_max(parse_function("linear:1"), parse_function("power:2"))
    assert f(0.5) == pytest.approx(0.5)
    assert f(3.0) == pytest.approx(9.0)
    g = inverse_function(parse_function("power:3"))
    assert g(27.0) == pytest.approx(3.0)


@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=60))
def test_isotonic_is_monotone_and_idempotent(ys):
    z = isotonic_increasing(np.array(ys))
    assert np.all(np.diff(z) >= -1e-9 * np.maximum(1.0, np.abs(z[1:])))
    np.testing.assert_allclose(isotonic_increasing(z), z, rtol=1e-12, atol=1e-9)


@pytest.mark.parametrize("kind", ["linear", "loglog", "pchip"])
def test_table_function_interpolates_knots(kind):
    x = np.logspace(-2, 2, 9)
    y = x**1.5
    f = table_function(x, y, kind=kind)
    np.testing.assert_allclose(f(x), y, rtol=1e-9)
    assert f(0.0) == 0.0
    s = np.logspace(-4, 4, 300)
    assert np.all(np.diff(f(s)) >= 0)


def test_table_function_round_trips_through_json():
    from delayios.funclib import function_from_json

    f = table_function([0.1, 1, 10], [0.2, 1, 30], kind="loglog")
    g = function_from_json(f.to_json())
    s = np.logspace(-3, 3, 40)
    np.testing.assert_allclose(g(s), f(s))


@pytest.mark.parametrize("spec", ["exp-kl:2,1", "exp-kl:1,0.3,2"])
def test_sontag_factorization_dominates(spec):
    beta = parse_kl(spec)
    fac = sontag_factorize(beta)
    assert not fac.grid_only
    R, T = np.meshgrid(fac.grid.r, fac.grid.t, indexing="ij")
    assert np.min(fac.slack(beta, R, T) / np.maximum(fac.q(R) * np.exp(-T), 1e-300)) > -1e-9


def test_sontag_flags_polynomial_decay():
    fac = sontag_factorize(parse_kl("rational-kl:1,1"))
    assert fac.grid_only


def test_power_map_inverse():
    p = power_map(3.0, 2.0)
    assert p.inverse(p(1.7)) == pytest.approx(1.7)


@pytest.mark.parametrize("spec", ["linear:2", "power:2", "poly:1,1", "sqrt:3"])
def test_margin_matches_exact_formula(spec):
    sigma = parse_function(spec)
    lam = synthesize_margin(sigma)
    v = np.logspace(-3, 3, 50)
    np.testing.assert_allclose(lam(v), margin_exact(sigma)(v), rtol=1e-3)


def test_rfc_envelope_covers_samples():
    rng = np.random.default_rng(0)
    s = rng.uniform(0, 5, (500, 3))
    x = s.sum(axis=1) ** 1.3
    samples = np.column_stack((s, x))
    env = build_rfc_envelope(samples)
    assert np.all(env.bound(s[:, 0], s[:, 1], s[:, 2]) >= x - 1e-12)
    assert env.chi(0.0) == 0.0
    with pytest.raises(EmptySampleSet):
        build_rfc_envelope([])


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_margin_predicate_random_points(a, s):
    sigma = parse_function(f"poly:{a},1")
    lam = synthesize_margin(sigma)
    assert sigma(lam(sigma(s))) <= 0.99 * s / 4
