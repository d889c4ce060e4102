from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from delayios.errors import ConfigError, ConfigMismatch
from delayios.signals import (
    DisturbanceSignal,
    HistorySegment,
    InputSignal,
    concat_input,
    read_trajectory_csv,
    window_max,
)


def test_history_literals():
    h = HistorySegment.from_literal("const:1,2", 0.5, 8, 2)
    assert h.samples.shape == (9, 2)
    assert h.sup_norm == pytest.approx(np.sqrt(5))
    h = HistorySegment.from_literal({"const": [3]}, 0.5, 8, 2)
    np.testing.assert_allclose(h.current, [3, 3])
    h = HistorySegment.from_literal({"samples": list(range(9))}, 0.5, 8, 1)
    assert h.current[0] == 8
    assert h.grid[0] == pytest.approx(-0.5)
    with pytest.raises(ConfigMismatch):
        HistorySegment.from_literal({"samples": [1, 2]}, 0.5, 8, 1)
    with pytest.raises(ConfigError) as exc:
        HistorySegment.from_literal({"spline": [1]}, 0.5, 8, 1)
    assert exc.value.key == "xi"


def test_history_from_function():
    h = HistorySegment.from_function(1.0, 4, lambda s: [s, -s])
    np.testing.assert_allclose(h.samples[:, 0], np.linspace(-1, 0, 5))
    assert h.component_norm(1) == pytest.approx(1.0)


def test_input_signal_evaluation_and_norms():
    u = InputSignal([0.0, 1.0, 2.5], [[1.0], [-3.0], [0.5]], 4.0)
    np.testing.assert_allclose(u([0.0, 0.99, 1.0, 2.49, 3.9]).ravel(), [1, 1, -3, -3, 0.5])
    assert u.norm == 3.0
    assert u.sup_norm(0.0, 1.0) == 1.0
    assert u.sup_norm(2.5, 4.0) == 0.5
    assert u.sup_norm(1.0, 1.0) == 0.0
    lit = u.to_literal()
    v = InputSignal.from_literal(lit, 1, 4.0)
    np.testing.assert_allclose(v.levels, u.levels)


def test_input_signal_validation():
    with pytest.raises(ConfigError):
        InputSignal([0.5], [[1.0]], 1.0)
    with pytest.raises(ConfigError):
        InputSignal([0.0, 0.0], [[1.0], [2.0]], 1.0)
    with pytest.raises(ConfigError):
        DisturbanceSignal([0.0], [[1.5]], 1.0)
    DisturbanceSignal([0.0], [[0.6, 0.8]], 1.0)


def test_concatenation():
    u = InputSignal([0, 1, 2], [1, 2, 3], 3)
    v = InputSignal([0, 0.5], [7, 8], 2)
    w = concat_input(u, 1.0, v)
    np.testing.assert_allclose(w.breakpoints, [0, 1, 1.5])
    np.testing.assert_allclose(w.levels.ravel(), [1, 7, 8])
    assert w.horizon == 3.0
    w = concat_input(u, 1.5, v)
    np.testing.assert_allclose(w([0.5, 1.2, 1.6, 2.2]).ravel(), [1, 2, 7, 8])


@given(st.lists(st.floats(-10, 10), min_size=6, max_size=40), st.integers(1, 5))
def test_window_max_matches_naive(vals, width):
    a = np.array(vals)
    got = window_max(a, width)
    naive = [np.max(a[i - width : i + 1]) for i in range(width, a.size)]
    np.testing.assert_allclose(got, naive)


def test_trajectory_csv_round_trip(tmp_path):
    from delayios.dde import SimConfig, get_model, simulate

    model = get_model("ex-redef")
    xi = HistorySegment.constant(0.5, 8, [1.0, 0.5, -0.5])
    tr = simulate(model, xi, InputSignal.constant([0.2], 1.0), SimConfig(1.0, 8))
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    back = read_trajectory_csv(path)
    np.testing.assert_allclose(back["t"], tr.times)
    np.testing.assert_allclose(back["x_3"], tr.states[:, 2], rtol=1e-15)
    assert path.read_text().splitlines()[0].startswith("t,x_1,x_2,x_3,y_1")
