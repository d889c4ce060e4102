from __future__ import annotations

import numpy as np
import pytest

from delayios.certify import EnsembleSpec
from delayios.dde import SimConfig, get_model, model_from_dsl
from delayios.errors import ConfigError
from delayios.funclib import parse_function
from delayios.margin import build_closed_loop, run_adversaries, verify_robust

SPEC = dict(size=16, radius=2.0, seed=3, horizon=8.0, steps_per_delay=16)


def test_margin_lambda_matches_formula():
    cl = build_closed_loop(get_model("delay-free-lin"), parse_function("linear:2"))
    # lambda(v) = 1/2 sigma^{-1}(sigma^{-1}(v) / 4) = v / 32
    assert cl.lam(1.0) == pytest.approx(1 / 32, rel=1e-6)
    assert cl.lam(0.0) == 0.0


def test_adversaries_stay_in_unit_ball():
    cl = build_closed_loop(get_model("delay-free-lin"), parse_function("linear:2"))
    xi = np.full((17, 4, 1), 1.5)
    runs = run_adversaries(cl, xi, SimConfig(4.0, 16, history_interp="linear"), ["random", "constant", "greedy"], 0, 8, 1)
    for run in runs:
        # applied holds the disturbance d; the feedback d * lambda(|y|) is formed inside f
        d = run.res.applied[:, :, 0]
        assert np.all(np.abs(d) <= 1.0 + 1e-12)
        assert np.max(np.abs(run.res.outputs[-1])) < np.max(np.abs(run.res.outputs[0]))


def test_delay_free_closed_loop_is_robust():
    cl = build_closed_loop(get_model("delay-free-lin"), parse_function("linear:2"))
    rep = verify_robust(cl, "OL-RGAOS", EnsembleSpec(**SPEC))
    assert rep.satisfied, rep.checks
    assert min(rep.rates.values()) >= 0.9
    assert rep.d_invariance["max_output"] == 0.0
    js = rep.to_json()
    assert js["verdict"] == "satisfied-on-ensemble"


def test_variants_and_errors():
    cl = build_closed_loop(get_model("delay-free-lin"), parse_function("linear:2"))
    with pytest.raises(ConfigError) as exc:
        verify_robust(cl, "XYZ", EnsembleSpec(**SPEC))
    assert exc.value.key == "variant"
    for v in ("RGAOS", "SI-RGAOS"):
        assert verify_robust(cl, v, EnsembleSpec(**SPEC), adversaries=["random"]).satisfied


def test_unstable_closed_loop_is_flagged():
    m = model_from_dsl({"n": 1, "theta": 1.0, "f": ["0.5 * x1 + u1"], "h0": ["x1"], "pi": "id"})
    cl = build_closed_loop(m, parse_function("linear:1"))
    rep = verify_robust(cl, "OL-RGAOS", EnsembleSpec(**dict(SPEC, horizon=40.0)), adversaries=["random"],
                        zero_output=0)
    assert rep.verdict == "violated"
