from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from delayios.cli import run
from delayios.errors import ConfigError
from delayios.report import canonical_dumps, emit_report, load_report, make_envelope
from delayios.signals import read_trajectory_csv

json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-10**9, 10**9) | st.floats(allow_nan=False, allow_infinity=False)
    | st.text(max_size=8),
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=6), inner, max_size=4),
    max_leaves=20,
)


@given(json_values)
def test_canonical_json_round_trips(value):
    text = canonical_dumps({"v": value})
    assert json.loads(text) == {"v": value}
    assert canonical_dumps(json.loads(text)) == text


def test_canonical_json_is_sorted_and_typed():
    text = canonical_dumps({"b": 1.0, "a": np.float64(0.1), "c": np.arange(2)})
    assert text == '{"a":0.10000000000000001,"b":1.0,"c":[0,1]}\n'


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_values_are_rejected(bad, tmp_path):
    with pytest.raises(ConfigError) as exc:
        emit_report({"result": {"x": [1.0, bad]}}, tmp_path / "r.json")
    assert "$.result.x[1]" in str(exc.value)
    assert not (tmp_path / "r.json").exists()


def test_envelope_and_sidecar(tmp_path):
    env = make_envelope("simulate", {"model": "m"}, {"ok": True}, 0)
    path = emit_report(env, tmp_path / "simulate.json", timing={"seconds": 0.5})
    assert load_report(path)["tool"] == "delayios"
    assert (tmp_path / "simulate.timing.json").exists()
    assert "seconds" not in path.read_text()


def test_simulate_linear_dde(tmp_path):
    code = run(["simulate", "--model", "linear-dde", "--theta", "0.5", "--xi", "const:1", "--u", "const:0",
                "--T", "1", "--out", str(tmp_path), "--plot"])
    assert code == 0
    csv = read_trajectory_csv(tmp_path / "trajectory.csv")
    assert csv["x_1"][-1] == pytest.approx(0.125, abs=1e-8)
    assert (tmp_path / "trajectory.png").stat().st_size > 0
    rep = load_report(tmp_path / "simulate.json")
    assert rep["exit_code"] == 0 and rep["config"]["theta"] == 0.5


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": "linear-dde", "theta": 0.5, "xi": "const:1", "T": 0.5}))
    assert run(["simulate", "--config", str(cfg), "--T", "1", "--out", str(tmp_path)]) == 0
    assert load_report(tmp_path / "simulate.json")["result"]["final_state"] == [0.125]


def test_config_errors_exit_2(tmp_path, capsys):
    empty = tmp_path / "empty.json"
    empty.write_text("{}")
    assert run(["simulate", "--config", str(empty), "--out", str(tmp_path)]) == 2
    assert "[model]" in capsys.readouterr().err
    assert run([]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": "linear-dde", "bogus": 1}))
    assert run(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "[bogus]" in capsys.readouterr().err
    assert run(["certify", "--model", "ex-redef", "--form", "IOS", "--out", str(tmp_path)]) == 2
    assert "[seed]" in capsys.readouterr().err
    assert run(["simulate", "--model", "linear-dde", "--T", "abc", "--out", str(tmp_path)]) == 2
    assert "[T]" in capsys.readouterr().err
    assert run(["simulate", "--model", "linear-dde", "--xi", "const:1,2", "--out", str(tmp_path)]) == 2
    assert run(["certify", "--model", "ex-redef", "--form", "IOS", "--seed", "1", "--beta", "exp-kl:1,1",
                "--out", str(tmp_path)]) == 2
    assert run(["nonsense"]) == 2


def test_certify_ol_gs_falsification(tmp_path):
    code = run(["certify", "--model", "ex-redef", "--form", "OL-GS", "--sigma", "linear:1000", "--seed", "7",
                "--radius", "2", "--ensemble-size", "30", "--steps-per-delay", "16", "--out", str(tmp_path), "--plot"])
    assert code == 1
    rep = load_report(tmp_path / "certify.json")
    assert rep["result"]["verdict"] == "violated"
    assert rep["result"]["witness"]["label"].startswith("zero-output")
    assert (tmp_path / "certify.png").exists()


def test_certify_true_estimate_exits_0(tmp_path):
    code = run(["certify", "--model", "delay-free-lin", "--form", "IOS-max", "--beta", "exp-kl:2,1", "--gamma",
                "linear:2", "--seed", "1", "--ensemble-size", "20", "--steps-per-delay", "8", "--T", "5",
                "--tol", "1e-6", "--out", str(tmp_path)])
    assert code == 0


def test_dsl_model_from_file(tmp_path):
    model = tmp_path / "model.json"
    model.write_text(json.dumps({"n": 1, "theta": 0.5, "f": ["-xd1 + u1"], "h0": ["x1"]}))
    code = run(["simulate", "--model", "@" + str(model), "--xi", "const:1", "--T", "1", "--out", str(tmp_path)])
    assert code == 0
    assert load_report(tmp_path / "simulate.json")["result"]["final_state"][0] == pytest.approx(0.125, abs=1e-8)


def test_redefine_and_margin_commands(tmp_path):
    code = run(["redefine", "--model", "delay-free-lin", "--xi", "const:1.5", "--beta", "exp-kl:2,1", "--gamma",
                "linear:2", "--steps-per-delay", "8", "--segments", "2", "--levels", "3", "--out", str(tmp_path)])
    assert code == 0
    est = load_report(tmp_path / "redefine.json")["result"]["estimate"]
    assert est["value"] == pytest.approx(1.5)
    assert est["brackets"]["lower"] <= est["brackets"]["upper"]
    assert run(["redefine", "--model", "delay-free-lin", "--xi", "const:1", "--out", str(tmp_path)]) == 2

    code = run(["margin", "--model", "delay-free-lin", "--sigma", "linear:2", "--seed", "0", "--ensemble-size", "8",
                "--steps-per-delay", "8", "--T", "6", "--adversaries", "random,constant", "--out", str(tmp_path),
                "--plot"])
    assert code == 0
    rep = load_report(tmp_path / "margin.json")["result"]
    assert rep["lambda_at_1"] == pytest.approx(1 / 32, rel=1e-6)
    assert (tmp_path / "margin_lambda.png").exists()
