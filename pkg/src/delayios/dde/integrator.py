"""Fixed-step RK4 for x'(t) = f(x_t, u(t)) on a delay-aligned grid.

The step is delta = theta / N, so x(t - theta) at grid times is a stored
sample. At the half-step stages the delayed value sits halfway between two
stored samples; it is filled in with a cubic Hermite interpolant whose
slopes are the stored right-hand-side values (or finite differences on the
initial history), which keeps the scheme fourth order. Histories that are
piecewise linear on the grid (as the ensemble samplers produce) should use
``history_interp="linear"``, which is exact for them; Hermite slopes from
finite differences overshoot at their kinks.

Everything runs on a batch axis so an ensemble of B members advances in
lockstep with arrays of shape (B, n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from ..errors import BlowUp, ConfigMismatch
from ..signals import HistorySegment, InputSignal, Trajectory

B_MAX_DEFAULT = 1e12


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    steps_per_delay: int = 64
    integrator: str = "rk4"
    b_max: float = B_MAX_DEFAULT
    #: midpoint rule on the initial history: "hermite" or "linear"
    history_interp: str = "hermite"

    def __post_init__(self):
        if self.history_interp not in ("hermite", "linear"):
            raise ConfigMismatch(f"history_interp must be 'hermite' or 'linear', got {self.history_interp!r}")
        if self.integrator != "rk4":
            raise ConfigMismatch(f"unsupported integrator {self.integrator!r}")
        if not self.b_max > 0:
            raise ConfigMismatch("b_max must be positive")
        if self.steps_per_delay < 1:
            raise ConfigMismatch("steps_per_delay must be >= 1")
        if not self.horizon >= 0:
            raise ConfigMismatch("horizon must be >= 0")

    def step(self, theta: float) -> float:
        return theta / self.steps_per_delay

    def n_steps(self, theta: float) -> int:
        d = self.step(theta)
        k = int(round(self.horizon / d))
        if abs(k * d - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise ConfigMismatch(
                f"horizon {self.horizon} is not a multiple of the step theta/N = {d:g}"
            )
        return k


class Window:
    """What f and h see of the history x_t at one evaluation point.

    ``x`` is x(t), ``delayed`` is x(t - theta); ``sup`` (||x_t||) and
    ``wmax`` (per-component max |x_i| over the window) are computed on
    first access.
    """

    __slots__ = ("t", "theta", "x", "delayed", "_inner_sup", "_inner_abs", "_sup", "_wmax")

    def __init__(self, t, theta, x, delayed, inner_sup=None, inner_abs=None):
        self.t = t
        self.theta = theta
        self.x = x
        self.delayed = delayed
        self._inner_sup = inner_sup
        self._inner_abs = inner_abs
        self._sup = None
        self._wmax = None

    @property
    def sup(self) -> np.ndarray:
        if self._sup is None:
            s = np.maximum(_norm(self.x), _norm(self.delayed))
            if self._inner_sup is not None:
                s = np.maximum(s, self._inner_sup)
            self._sup = s
        return self._sup

    @property
    def wmax(self) -> np.ndarray:
        if self._wmax is None:
            w = np.maximum(np.abs(self.x), np.abs(self.delayed))
            if self._inner_abs is not None:
                w = np.maximum(w, self._inner_abs)
            self._wmax = w
        return self._wmax

    @property
    def batch(self) -> int:
        return self.x.shape[0]


def _norm(a):
    return np.sqrt(np.einsum("...i,...i->...", a, a))


@dataclass(eq=False)
class BatchResult:
    """States for B members on [-theta, T]; index j <-> time (j - N) * delta."""

    theta: float
    steps_per_delay: int
    full: np.ndarray  # (K + N + 1, B, n)
    outputs: np.ndarray  # (K + 1, B, p)
    history_outputs: Optional[np.ndarray]  # (N + 1, B, p) from h0, if any
    applied: np.ndarray  # (K, B, m)

    @property
    def step(self) -> float:
        return self.theta / self.steps_per_delay

    @property
    def n_steps(self) -> int:
        return self.outputs.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.step * np.arange(self.n_steps + 1)

    @property
    def states(self) -> np.ndarray:
        return self.full[self.steps_per_delay :]

    @property
    def batch(self) -> int:
        return self.full.shape[1]

    @property
    def output_norms(self) -> np.ndarray:
        """|y(t_k)| with shape (K + 1, B)."""
        return _norm(self.outputs)

    @property
    def state_norms(self) -> np.ndarray:
        return _norm(self.states)

    def Y(self) -> Optional[np.ndarray]:
        """||y_t|| = max of |h0| over the delay window, shape (K + 1, B)."""
        if self.history_outputs is None:
            return None
        from numpy.lib.stride_tricks import sliding_window_view

        seq = np.concatenate((_norm(self.history_outputs), self.output_norms[1:]), axis=0)
        return np.max(sliding_window_view(seq, self.steps_per_delay + 1, axis=0), axis=-1)

    def xi_norms(self) -> np.ndarray:
        return np.max(_norm(self.full[: self.steps_per_delay + 1]), axis=0)

    def member(self, i: int, u: Optional[InputSignal] = None) -> Trajectory:
        N = self.steps_per_delay
        hist = HistorySegment(self.theta, self.full[: N + 1, i])
        ho = None
        if self.history_outputs is not None:
            ho = _norm(self.history_outputs[:, i])
        return Trajectory(
            history=hist,
            times=self.times,
            states=self.full[N:, i].copy(),
            outputs=self.outputs[:, i].copy(),
            history_outputs=ho,
            input=u,
            applied_input=self.applied[:, i].copy(),
        )


InputSpec = Union[None, InputSignal, Sequence[InputSignal], np.ndarray]
Control = Callable[[int, float, Window, np.ndarray], np.ndarray]


def sample_inputs(inputs: InputSpec, B: int, m: int, K: int, delta: float) -> np.ndarray:
    """Per-step input values (K, B, m), sampled at step midpoints."""
    if inputs is None:
        return np.zeros((K, B, m))
    mids = delta * (np.arange(K) + 0.5)
    if isinstance(inputs, InputSignal):
        vals = inputs(mids)
        if vals.shape[-1] != m:
            raise ConfigMismatch(f"input has dimension {vals.shape[-1]}, model expects {m}")
        return np.broadcast_to(vals[:, None, :], (K, B, m)).copy()
    if isinstance(inputs, np.ndarray):
        arr = np.asarray(inputs, dtype=float)
        if arr.shape != (K, B, m):
            raise ConfigMismatch(f"input array shape {arr.shape} != {(K, B, m)}")
        return arr
    sigs = list(inputs)
    if len(sigs) != B:
        raise ConfigMismatch(f"{len(sigs)} inputs for {B} members")
    out = np.empty((K, B, m))
    for i, s in enumerate(sigs):
        v = s(mids)
        if v.shape[-1] != m:
            raise ConfigMismatch(f"input has dimension {v.shape[-1]}, model expects {m}")
        out[:, i] = v
    return out


def simulate_batch(
    model,
    xi: np.ndarray,
    cfg: SimConfig,
    inputs: InputSpec = None,
    control: Optional[Control] = None,
) -> BatchResult:
    """Integrate B members at once.

    ``xi`` has shape (N + 1, B, n). ``control(k, t_k, window, y_k)`` may
    return the (B, m) input held on step k; it overrides ``inputs``.
    """
    theta = float(model.theta)
    N = cfg.steps_per_delay
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 2:
        xi = xi[:, None, :]
    if xi.shape[0] != N + 1 or xi.shape[2] != model.n:
        raise ConfigMismatch(
            f"history grid has shape {xi.shape[:1] + xi.shape[2:]}, expected ({N + 1}, {model.n})"
        )
    if not np.all(np.isfinite(xi)):
        raise ConfigMismatch("history samples must be finite")
    B = xi.shape[1]
    d = cfg.step(theta)
    K = cfg.n_steps(theta)
    m = model.m
    U = None if control is not None else sample_inputs(inputs, B, m, K, d)

    full = np.empty((K + N + 1, B, model.n))
    full[: N + 1] = xi
    slopes = np.empty_like(full)  # derivative estimates for the Hermite fill
    slopes[: N + 1] = np.gradient(xi, d, axis=0, edge_order=2) if N >= 2 else (xi[1] - xi[0]) / d
    left_slope0 = slopes[N].copy()
    norms = np.empty((K + N + 1, B))
    norms[: N + 1] = _norm(xi)
    absx = np.abs(full[: N + 1])
    abs_full = np.empty_like(full)
    abs_full[: N + 1] = absx
    applied = np.empty((K, B, m))

    outputs = np.empty((K + 1, B, model.p))
    hist_out = None
    if model.h0 is not None:
        hist_out = np.asarray(model.h0(xi.reshape(-1, model.n)), float).reshape(N + 1, B, model.p)

    def h_at(j, t):
        w = Window(t, theta, full[j], full[j - N], norms[j - N + 1 : j].max(axis=0) if N > 1 else None,
                   abs_full[j - N + 1 : j].max(axis=0) if N > 1 else None)
        return np.asarray(model.h(w), float).reshape(B, model.p), w

    outputs[0], w0 = h_at(N, 0.0)
    half = 0.5 * d
    linear_hist = cfg.history_interp == "linear"
    for k in range(K):
        j = N + k  # index of t_k
        t = k * d
        x = full[j]
        # window interior (exclusive of both ends at the half step)
        inner_sup = norms[j - N + 1 : j + 1].max(axis=0)
        inner_abs = abs_full[j - N + 1 : j + 1].max(axis=0)
        if control is not None:
            wk = Window(t, theta, x, full[j - N], inner_sup, inner_abs)
            u = np.asarray(control(k, t, wk, outputs[k]), float).reshape(B, m)
        else:
            u = U[k]
        applied[k] = u
        x_lo, x_hi = full[j - N], full[j - N + 1]
        k1 = np.asarray(model.f(Window(t, theta, x, x_lo, inner_sup, inner_abs), u), float)
        slopes[j] = k1
        # the interval ending at t = 0 needs the history's left slope there
        s_hi = left_slope0 if j - N + 1 == N else slopes[j - N + 1]
        mid = 0.5 * (x_lo + x_hi)
        if k >= N or not linear_hist:
            mid = mid + 0.125 * d * (slopes[j - N] - s_hi)

        x2 = x + half * k1
        k2 = np.asarray(model.f(Window(t + half, theta, x2, mid, inner_sup, inner_abs), u), float)
        x3 = x + half * k2
        k3 = np.asarray(model.f(Window(t + half, theta, x3, mid, inner_sup, inner_abs), u), float)
        x4 = x + d * k3
        k4 = np.asarray(model.f(Window(t + d, theta, x4, x_hi, inner_sup, inner_abs), u), float)
        xn = x + (d / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

        nn = _norm(xn)
        bad = ~np.isfinite(nn) | (nn > cfg.b_max)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise BlowUp((k + 1) * d, i, float(nn[i]))
        full[j + 1] = xn
        norms[j + 1] = nn
        abs_full[j + 1] = np.abs(xn)
        outputs[k + 1], _ = h_at(j + 1, (k + 1) * d)
    return BatchResult(theta, N, full, outputs, hist_out, applied)


def simulate(model, xi: HistorySegment, u: Optional[InputSignal], cfg: SimConfig) -> Trajectory:
    """Single run; a thin wrapper over :func:`simulate_batch`."""
    if abs(xi.theta - model.theta) > 1e-12 * max(1.0, model.theta):
        raise ConfigMismatch(f"history delay {xi.theta} != model delay {model.theta}")
    if xi.steps != cfg.steps_per_delay:
        raise ConfigMismatch(f"history has {xi.steps} steps per delay, config has {cfg.steps_per_delay}")
    if u is not None and u.horizon < cfg.horizon - 1e-12:
        raise ConfigMismatch(f"input horizon {u.horizon} shorter than simulation horizon {cfg.horizon}")
    res = simulate_batch(model, xi.samples[:, None, :], cfg, inputs=u)
    return res.member(0, u)


def history_grid(theta: float, steps: int) -> np.ndarray:
    return -theta + (theta / steps) * np.arange(steps + 1)


def trapezoid_window(values: np.ndarray, delta: float, steps: int) -> np.ndarray:
    """Trapezoid integral over each window of ``steps + 1`` consecutive samples (axis 0)."""
    c = np.concatenate((np.zeros((1,) + values.shape[1:]), np.cumsum(0.5 * (values[1:] + values[:-1]), axis=0)))
    return delta * (c[steps:] - c[:-steps])


__all__ = [
    "B_MAX_DEFAULT",
    "BatchResult",
    "SimConfig",
    "Window",
    "history_grid",
    "sample_inputs",
    "simulate",
    "simulate_batch",
    "trapezoid_window",
]
