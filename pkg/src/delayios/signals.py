"""Histories, piecewise-constant inputs, disturbances and trajectories."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, ConfigMismatch, NoDelayFreeOutput


def _norms(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.square(a), axis=-1))


@dataclass(frozen=True, eq=False)
class HistorySegment:
    """Samples of xi on the uniform grid s = -theta, -theta + delta, ..., 0."""

    theta: float
    samples: np.ndarray  # (N + 1, n)

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.shape[0] < 2:
            raise ConfigMismatch("a history needs at least two grid samples")
        if not np.all(np.isfinite(s)):
            raise ConfigMismatch("history samples must be finite")
        if not self.theta > 0:
            raise ConfigMismatch(f"delay must be positive, got {self.theta}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def steps(self) -> int:
        return self.samples.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def step(self) -> float:
        return self.theta / self.steps

    @property
    def grid(self) -> np.ndarray:
        return -self.theta + self.step * np.arange(self.steps + 1)

    @property
    def sup_norm(self) -> float:
        return float(np.max(_norms(self.samples)))

    @property
    def current(self) -> np.ndarray:
        """xi(0)."""
        return self.samples[-1]

    def component_norm(self, i: int) -> float:
        return float(np.max(np.abs(self.samples[:, i])))

    def restrict(self, start: int, stop: int) -> np.ndarray:
        """Samples with grid indices in [start, stop)."""
        return self.samples[start:stop]

    @classmethod
    def constant(cls, theta: float, steps: int, value) -> "HistorySegment":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(theta, np.tile(value, (steps + 1, 1)))

    @classmethod
    def from_function(cls, theta: float, steps: int, fn: Callable[[float], object]) -> "HistorySegment":
        s = -theta + (theta / steps) * np.arange(steps + 1)
        return cls(theta, np.array([np.atleast_1d(fn(v)) for v in s], dtype=float))

    @classmethod
    def from_literal(cls, literal, theta: float, steps: int, dim: int) -> "HistorySegment":
        """Build from ``{"const": [..]}``, ``{"samples": [[..], ..]}`` or ``"const:1,2"``."""
        if isinstance(literal, str):
            kind, _, rest = literal.partition(":")
            vals = [float(v) for v in rest.split(",") if v.strip()]
            literal = {kind: vals}
        if not isinstance(literal, dict) or len(literal) != 1:
            raise ConfigError(f"history literal must be a one-key object, got {literal!r}", "xi")
        (kind, payload), = literal.items()
        if kind == "const":
            value = np.atleast_1d(np.asarray(payload, dtype=float))
            if value.size == 1 and dim > 1:
                value = np.full(dim, float(value[0]))
            if value.size != dim:
                raise ConfigError(f"const history has {value.size} entries, model state has {dim}", "xi")
            return cls.constant(theta, steps, value)
        if kind == "samples":
            arr = np.asarray(payload, dtype=float)
            if arr.ndim == 1:
                arr = arr[:, None]
            if arr.shape != (steps + 1, dim):
                raise ConfigMismatch(f"history samples shape {arr.shape} != {(steps + 1, dim)}")
            return cls(theta, arr)
        raise ConfigError(f"unknown history literal kind {kind!r}", "xi")


@dataclass(frozen=True, eq=False)
class InputSignal:
    """Right-continuous piecewise-constant u on [0, horizon].

    ``levels[i]`` holds on [breakpoints[i], breakpoints[i+1]).
    """

    breakpoints: np.ndarray
    levels: np.ndarray  # (len(breakpoints), m)
    horizon: float

    def __post_init__(self):
        b = np.array(self.breakpoints, dtype=float).ravel()
        lv = np.array(self.levels, dtype=float)
        if lv.ndim == 1:
            lv = lv[:, None]
        if b.size == 0 or b[0] != 0.0:
            raise ConfigError("input breakpoints must start at 0", "u")
        if np.any(np.diff(b) <= 0):
            raise ConfigError("input breakpoints must be strictly increasing", "u")
        if lv.shape[0] != b.size:
            raise ConfigError("one level per breakpoint required", "u")
        if not np.all(np.isfinite(lv)):
            raise ConfigError("input levels must be finite", "u")
        b.setflags(write=False)
        lv.setflags(write=False)
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "levels", lv)
        object.__setattr__(self, "horizon", float(self.horizon))
        self._validate()

    def _validate(self):
        pass

    @property
    def dim(self) -> int:
        return self.levels.shape[1]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.breakpoints, t, side="right") - 1, 0, None)
        return self.levels[idx]

    def sup_norm(self, start: float = 0.0, stop: float | None = None) -> float:
        """Exact sup of |u| over [start, stop) (whole signal by default)."""
        stop = math.inf if stop is None else stop
        if stop <= start:
            return 0.0
        ends = np.append(self.breakpoints[1:], math.inf)
        cover = (self.breakpoints < stop) & (ends > start)
        if not np.any(cover):
            return 0.0
        return float(np.max(_norms(self.levels[cover])))

    @property
    def norm(self) -> float:
        return self.sup_norm()

    @classmethod
    def constant(cls, value, horizon: float) -> "InputSignal":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(np.array([0.0]), value[None, :], horizon)

    @classmethod
    def zero(cls, m: int, horizon: float) -> "InputSignal":
        return cls.constant(np.zeros(m), horizon)

    @classmethod
    def from_literal(cls, literal, m: int, horizon: float) -> "InputSignal":
        """``{"const": [..]}``, ``{"piecewise": [[t, level], ..]}`` or ``"const:0"``."""
        if isinstance(literal, str):
            kind, _, rest = literal.partition(":")
            literal = {kind: [float(v) for v in rest.split(",") if v.strip()]}
        if not isinstance(literal, dict) or len(literal) != 1:
            raise ConfigError(f"input literal must be a one-key object, got {literal!r}", "u")
        (kind, payload), = literal.items()
        if kind == "const":
            value = np.atleast_1d(np.asarray(payload, dtype=float))
            if value.size == 1 and m > 1:
                value = np.full(m, float(value[0]))
            if value.size != m:
                raise ConfigError(f"const input has {value.size} entries, model has {m} inputs", "u")
            return cls.constant(value, horizon)
        if kind == "piecewise":
            times = [float(p[0]) for p in payload]
            levels = [np.atleast_1d(np.asarray(p[1], dtype=float)) for p in payload]
            return cls(np.array(times), np.array(levels), horizon)
        raise ConfigError(f"unknown input literal kind {kind!r}", "u")

    def to_literal(self) -> dict:
        return {"piecewise": [[float(t), [float(v) for v in lv]] for t, lv in zip(self.breakpoints, self.levels)]}


class DisturbanceSignal(InputSignal):
    """Input whose levels lie in the closed unit ball."""

    def _validate(self):
        if np.any(_norms(self.levels) > 1.0 + 1e-12):
            raise ConfigError("disturbance levels must lie in the closed unit ball", "d")


def concat_input(u: InputSignal, tau: float, v: InputSignal) -> InputSignal:
    """u on [0, tau), v(. - tau) afterwards."""
    if tau < 0:
        raise ConfigError("concatenation time must be >= 0", "tau")
    keep = u.breakpoints < tau
    starts = np.concatenate((u.breakpoints[keep], v.breakpoints + tau))
    levels = np.concatenate((u.levels[keep], v.levels))
    # a start shared by u and v (tau on a breakpoint) keeps v's level
    last_for = {t: i for i, t in enumerate(starts)}
    b = np.unique(starts)
    lv = levels[[last_for[t] for t in b]]
    return InputSignal(b, lv, tau + v.horizon)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A simulated run on the grid t_k = k * delta, k = 0..K."""

    history: HistorySegment
    times: np.ndarray  # (K + 1,)
    states: np.ndarray  # (K + 1, n), states[0] == history.current
    outputs: np.ndarray  # (K + 1, p)
    history_outputs: Optional[np.ndarray] = None  # |h0(xi(s))| on the history grid
    input: Optional[InputSignal] = None
    applied_input: Optional[np.ndarray] = None  # (K, m) value used on each step

    @property
    def theta(self) -> float:
        return self.history.theta

    @property
    def step(self) -> float:
        return self.history.step

    @property
    def delay_steps(self) -> int:
        return self.history.steps

    def full_states(self) -> np.ndarray:
        """States on [-theta, T]: history samples followed by states[1:]."""
        return np.concatenate((self.history.samples, self.states[1:]), axis=0)

    def index_of(self, t: float) -> int:
        k = int(round(t / self.step))
        if k < 0 or k >= self.times.size or abs(k * self.step - t) > 1e-9 * max(1.0, abs(t)):
            raise ConfigMismatch(f"t = {t} is not a grid time of this trajectory")
        return k

    def history_at(self, t: float) -> HistorySegment:
        """x_t, assembled from stored grid values only."""
        k = self.index_of(t)
        full = self.full_states()
        N = self.delay_steps
        return HistorySegment(self.theta, full[k : k + N + 1])

    @property
    def output_norms(self) -> np.ndarray:
        return _norms(self.outputs)

    @property
    def Y(self) -> Optional[np.ndarray]:
        """||y_t|| = max over the delay window of |h0(x(s))|, when h0 exists."""
        if self.history_outputs is None:
            return None
        return window_max(np.concatenate((self.history_outputs, self.output_norms[1:])), self.delay_steps)

    def to_csv(self, path) -> None:
        write_trajectory_csv(path, self)


def window_max(values: np.ndarray, width: int) -> np.ndarray:
    """Running max over windows of ``width + 1`` samples; returns one entry per window end >= width."""
    from numpy.lib.stride_tricks import sliding_window_view

    return np.max(sliding_window_view(values, width + 1, axis=0), axis=-1)


def history_norm(xi: HistorySegment) -> float:
    return xi.sup_norm


def output_history(traj: Trajectory, h0: Optional[Callable], t: float) -> float:
    """H(x_t) = max over s in [t - theta, t] of |h0(x(s))|."""
    if h0 is None:
        raise NoDelayFreeOutput("output history requires a delay-free output map")
    k = traj.index_of(t)
    window = traj.full_states()[k : k + traj.delay_steps + 1]
    y = np.atleast_2d(np.asarray(h0(window), dtype=float))
    if y.shape[0] != window.shape[0]:
        y = y.T
    return float(np.max(_norms(y)))


def write_trajectory_csv(path, traj: Trajectory) -> None:
    n = traj.states.shape[1]
    p = traj.outputs.shape[1]
    Y = traj.Y
    header = ["t"] + [f"x_{i + 1}" for i in range(n)] + [f"y_{j + 1}" for j in range(p)]
    if Y is not None:
        header.append("Y")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k, t in enumerate(traj.times):
            row = [repr(float(t))] + [repr(float(v)) for v in traj.states[k]] + [repr(float(v)) for v in traj.outputs[k]]
            if Y is not None:
                row.append(repr(float(Y[k])))
            w.writerow(row)


def read_trajectory_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    return {name: body[:, i] for i, name in enumerate(header)}
