from __future__ import annotations

import numpy as np
import pytest

from delayios.certify import (
    EnsembleSpec,
    EstimateCandidate,
    check_estimate,
    check_razumikhin,
    derived_from_si,
    draw_ensemble,
    estimate_asymptotic_gain,
    fit_exponential,
    run_ensemble,
)
from delayios.dde import SimConfig, get_model, model_from_dsl, simulate_batch
from delayios.errors import ConfigError, MissingFunction, NoDelayFreeOutput
from delayios.funclib import identity, parse_function, parse_kl
from delayios.signals import InputSignal

SMALL = dict(size=40, radius=2.0, seed=0, horizon=5.0, steps_per_delay=16)


def _cand(form, **fns):
    parsed = {}
    for k, v in fns.items():
        parsed[k] = parse_kl(v) if k == "beta" else parse_function(v)
    return EstimateCandidate(form, **parsed)


def test_true_estimates_pass_on_delay_free_system():
    # x' = -x + u: |x(t)| <= |xi(0)| e^{-t} + ||u||, tight, so allow for RK4 error at delta = 1/16
    m = get_model("delay-free-lin")
    spec = EnsembleSpec(**SMALL)
    tol = 1e-6
    for form in ("IOS", "SI-IOS"):
        rep = check_estimate(m, _cand(form, beta="exp-kl:1,1", gamma="linear:1"), spec, tol=tol)
        assert rep.satisfied, rep.witness
    # a + b <= max(2a, 2b)
    assert check_estimate(m, _cand("IOS-max", beta="exp-kl:2,1", gamma="linear:2"), spec, tol=tol).satisfied
    assert check_estimate(m, _cand("OL-GS", sigma="linear:1"), spec, tol=tol).satisfied
    assert check_estimate(m, _cand("GS", sigma="linear:1", gamma="linear:1"), spec, tol=tol).satisfied
    assert check_estimate(m, _cand("OGS", sigma="linear:1", gamma="linear:1"), spec, tol=tol).satisfied


def test_violation_witness_replays():
    m = get_model("delay-free-lin")
    rep = check_estimate(m, _cand("IOS", beta="exp-kl:1,1", gamma="linear:0.5"), EnsembleSpec(**SMALL))
    assert rep.verdict == "violated" and rep.worst_slack < 0
    w = rep.witness
    xi = np.asarray(w["xi"]["samples"], float)
    u = InputSignal.from_literal(w["u"], 1, SMALL["horizon"])
    cfg = SimConfig(SMALL["horizon"], SMALL["steps_per_delay"], history_interp="linear")
    res = simulate_batch(m, xi[:, None, :], cfg, inputs=u)
    k = int(round(w["t"] / res.step))
    assert res.output_norms[k, 0] == pytest.approx(w["value"], rel=1e-12)
    assert res.output_norms[k, 0] > w["bound"]


def test_ol_gs_falsified_by_zero_output_members():
    m = get_model("ex-redef", 0.5)
    spec = EnsembleSpec(size=20, radius=2.0, seed=7, horizon=10.0, steps_per_delay=16, zero_output=4)
    rep = check_estimate(m, _cand("OL-GS", sigma="linear:1000"), spec)
    assert rep.verdict == "violated"
    assert rep.witness["label"].startswith("zero-output")


def test_missing_functions_and_bad_kappa():
    m = get_model("delay-free-lin")
    with pytest.raises(MissingFunction):
        check_estimate(m, EstimateCandidate("IOS", beta=parse_kl("exp-kl:1,1")), EnsembleSpec(**SMALL))
    with pytest.raises(ConfigError) as exc:
        EstimateCandidate("NOPE")
    assert exc.value.key == "form"
    bad = _cand("RAZ-IOS", beta="exp-kl:1,1", gamma="linear:1", kappa="linear:1.2")
    with pytest.raises(ConfigError) as exc:
        check_razumikhin(m, bad, EnsembleSpec(**SMALL))
    assert exc.value.key == "kappa"


def test_history_norm_needs_delay_free_output():
    m = model_from_dsl({"n": 1, "theta": 1.0, "f": ["-x1 + u1"], "h": ["xd1"]})
    cand = EstimateCandidate("SI-IOS", beta=parse_kl("exp-kl:1,1"), gamma=identity(), history_norm=True)
    with pytest.raises(NoDelayFreeOutput):
        check_estimate(m, cand, EnsembleSpec(**SMALL))
    with pytest.raises(NoDelayFreeOutput):
        check_razumikhin(m, _cand("RAZ-IOS", beta="exp-kl:1,1", gamma="linear:1", kappa="linear:0.5"),
                         EnsembleSpec(**SMALL))


def test_reports_do_not_depend_on_thread_count():
    m = get_model("ex-redef", 0.5)
    spec = EnsembleSpec(size=70, radius=1.5, seed=3, horizon=4.0, steps_per_delay=16)
    cand = _cand("IOS-max", beta="exp-kl:2,0.1", gamma="linear:2")
    a = check_estimate(m, cand, spec, threads=1).to_json()
    b = check_estimate(m, cand, spec, threads=3).to_json()
    assert a == b


def test_draws_respect_radii_and_component_values():
    m = get_model("ex-raz", 0.1)
    spec = EnsembleSpec(size=30, radius=2.0, u_radius=0.5, seed=1, horizon=2.0, steps_per_delay=8,
                        component_values={0: [0.0, 2.0, 5.0]})
    d = draw_ensemble(m, spec)
    assert np.max(np.linalg.norm(d.xi[:, :, 1:], axis=2)) <= 2.0 + 1e-12
    assert set(np.unique(d.xi[:, :, 0])) == {0.0, 2.0, 5.0}
    assert np.max(d.u_norms) <= 0.5 + 1e-12
    again = draw_ensemble(m, spec)
    np.testing.assert_array_equal(d.xi, again.xi)
    np.testing.assert_array_equal(d.U, again.U)


def test_fit_exponential_dominates_data():
    rng = np.random.default_rng(0)
    r = rng.uniform(0.1, 3, 400)
    t = rng.uniform(0, 10, 400)
    v = 1.5 * r * np.exp(-0.7 * t) * rng.uniform(0.2, 1.0, 400)
    fit = fit_exponential(r, t, v, b=1.0)
    assert np.all(fit.a * r * np.exp(-fit.c * t) >= v * (1 - 1e-12))
    assert fit.c >= 0.6


def test_derived_candidates_from_si():
    si = _cand("SI-IOS", beta="exp-kl:2,1", gamma="linear:1")
    d = derived_from_si(si, identity())
    assert d["OL-GS"].form == "OL-GS"
    assert d["IOS"].beta(1.0, 0.0) == pytest.approx(2.0)


def test_asymptotic_gain_staircase():
    m = get_model("delay-free-lin")
    g = estimate_asymptotic_gain(m, [0.0, 0.5, 1.0], EnsembleSpec(size=10, radius=1.0, seed=0, horizon=20.0,
                                                                steps_per_delay=8))
    assert g(0.0) < 1e-6
    assert 0.4 < g(0.5) <= 0.5 + 1e-9
    assert g(1.0) <= 1.0 + 1e-9


def test_oag_form():
    m = get_model("delay-free-lin")
    spec = EnsembleSpec(size=20, radius=1.0, seed=0, horizon=20.0, steps_per_delay=8)
    assert check_estimate(m, _cand("OAG", gamma="linear:1"), spec).satisfied
    assert not check_estimate(m, _cand("OAG", gamma="linear:0.3"), spec).satisfied


def test_run_ensemble_shapes():
    m = get_model("ex-redef")
    d = draw_ensemble(m, EnsembleSpec(size=5, seed=0, horizon=1.0, steps_per_delay=8, zero_output=2))
    res = run_ensemble(m, d)
    assert res.full.shape == (8 + 16 + 1, 7, 3)
    assert res.outputs.shape == (17, 7, 1)
    assert d.labels[-1] == "zero-output[1]"
