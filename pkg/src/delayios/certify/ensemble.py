"""Seeded ensembles of (history, input) pairs and a chunked parallel runner.

Members are split into fixed-size chunks regardless of the worker count, so
results are bit-identical for any number of threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..dde.integrator import BatchResult, SimConfig, simulate_batch
from ..errors import BlowUp, ConfigError
from ..signals import InputSignal

CHUNK = 32
THREADS_ENV = "DELAYIOS_THREADS"


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}", THREADS_ENV) from None
    return min(8, os.cpu_count() or 1)


def _ball(rng, count, n, radius):
    v = rng.standard_normal((count, n))
    v /= np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-300)
    return v * (radius * rng.random((count, 1)))


def random_histories(rng, count, radius, steps, n, nodes: int = 6) -> np.ndarray:
    """Piecewise-linear histories with grid-aligned nodes inside the ball of ``radius``.

    Shape (steps + 1, count, n). Linear interpolation between points of a
    ball stays in the ball, so ||xi|| <= radius exactly.
    """
    nodes = max(2, min(nodes, steps + 1))
    out = np.empty((steps + 1, count, n))
    grid = np.arange(steps + 1)
    for b in range(count):
        inner = rng.choice(np.arange(1, steps), size=nodes - 2, replace=False) if nodes > 2 else []
        idx = np.sort(np.concatenate(([0], inner, [steps]))).astype(int)
        vals = _ball(rng, idx.size, n, radius)
        for i in range(n):
            out[:, b, i] = np.interp(grid, idx, vals[:, i])
    return out


def random_bang_bang(rng, count, amplitude, m, K, switches: int = 8) -> np.ndarray:
    """(K, count, m) inputs switching between +-a*direction at random grid steps."""
    out = np.empty((K, count, m))
    amplitude = np.broadcast_to(np.asarray(amplitude, float), (count,))
    for b in range(count):
        n_sw = min(switches, max(K - 1, 0))
        cuts = np.sort(rng.choice(np.arange(1, K), size=n_sw, replace=False)) if n_sw > 0 else np.array([], int)
        bounds = np.concatenate(([0], cuts, [K])).astype(int)
        for s0, s1 in zip(bounds[:-1], bounds[1:]):
            if m == 1:
                lv = np.array([amplitude[b] * (1.0 if rng.random() < 0.5 else -1.0)])
            else:
                d = rng.standard_normal(m)
                lv = amplitude[b] * d / np.linalg.norm(d)
            out[s0:s1, b] = lv
    return out


def steps_to_signal(values: np.ndarray, delta: float) -> InputSignal:
    """Collapse per-step values (K, m) into a piecewise-constant signal."""
    values = np.asarray(values, float)
    K = values.shape[0]
    if K == 0:
        return InputSignal.zero(values.shape[1] if values.ndim == 2 else 1, 0.0)
    change = np.ones(K, bool)
    change[1:] = np.any(values[1:] != values[:-1], axis=1)
    idx = np.nonzero(change)[0]
    return InputSignal(idx * delta, values[idx], K * delta)


@dataclass
class EnsembleSpec:
    size: int = 200
    radius: float = 1.0
    u_radius: Optional[float] = None
    seed: int = 0
    horizon: float = 10.0
    steps_per_delay: int = 64
    switches: int = 8
    nodes: int = 6
    zero_input_fraction: float = 0.1
    #: component index -> values cycled over members, held constant over the history
    component_values: dict = field(default_factory=dict)
    #: extra members drawn from the model's zero-output sampler
    zero_output: int = 0
    #: explicit members: list of (xi (N+1, n), per-step input (K, m) or InputSignal or None)
    extras: list = field(default_factory=list)

    def sim_config(self) -> SimConfig:
        # sampled histories are piecewise linear on the grid
        return SimConfig(self.horizon, self.steps_per_delay, history_interp="linear")

    def to_json(self) -> dict:
        return {
            "size": self.size,
            "radius": self.radius,
            "u_radius": self.radius if self.u_radius is None else self.u_radius,
            "seed": self.seed,
            "horizon": self.horizon,
            "steps_per_delay": self.steps_per_delay,
            "switches": self.switches,
            "nodes": self.nodes,
            "zero_input_fraction": self.zero_input_fraction,
            "component_values": {str(k): list(map(float, v)) for k, v in sorted(self.component_values.items())},
            "zero_output": self.zero_output,
            "extras": len(self.extras),
        }


@dataclass(eq=False)
class EnsembleDraw:
    xi: np.ndarray  # (N + 1, B, n)
    U: np.ndarray  # (K, B, m)
    labels: list
    spec: EnsembleSpec
    delta: float

    @property
    def size(self) -> int:
        return self.xi.shape[1]

    @property
    def xi_norms(self) -> np.ndarray:
        return np.max(np.linalg.norm(self.xi, axis=2), axis=0)

    @property
    def u_norms(self) -> np.ndarray:
        if self.U.shape[0] == 0:
            return np.zeros(self.size)
        return np.max(np.linalg.norm(self.U, axis=2), axis=0)

    def input_signal(self, i: int) -> InputSignal:
        return steps_to_signal(self.U[:, i], self.delta)


def draw_ensemble(model, spec: EnsembleSpec) -> EnsembleDraw:
    if spec.size < 0:
        raise ConfigError("ensemble size must be >= 0", "ensemble_size")
    if spec.radius < 0:
        raise ConfigError("radius must be >= 0", "radius")
    rng = np.random.default_rng(spec.seed)
    N = spec.steps_per_delay
    cfg = spec.sim_config()
    delta = cfg.step(model.theta)
    K = cfg.n_steps(model.theta)
    n, m = model.n, model.m
    ur = spec.radius if spec.u_radius is None else spec.u_radius

    xi = random_histories(rng, spec.size, spec.radius, N, n, spec.nodes)
    for comp, values in sorted(spec.component_values.items()):
        vals = np.asarray(values, float)
        xi[:, :, int(comp)] = vals[np.arange(spec.size) % vals.size][None, :]
    amp = ur * rng.random(spec.size)
    zero_u = rng.random(spec.size) < spec.zero_input_fraction
    amp[zero_u] = 0.0
    U = random_bang_bang(rng, spec.size, amp, m, K, spec.switches)
    labels = [f"random[{i}]" for i in range(spec.size)]

    parts_xi, parts_U = [xi], [U]
    if spec.zero_output:
        if model.zero_output_sampler is None:
            raise ConfigError(f"model {model.name!r} has no zero-output sampler", "zero_output")
        zx = model.zero_output_sampler(rng, spec.zero_output, spec.radius, N)
        for comp, values in sorted(spec.component_values.items()):
            vals = np.asarray(values, float)
            zx[:, :, int(comp)] = vals[np.arange(spec.zero_output) % vals.size][None, :]
        parts_xi.append(zx)
        parts_U.append(np.zeros((K, spec.zero_output, m)))
        labels += [f"zero-output[{i}]" for i in range(spec.zero_output)]
    for j, (ex_xi, ex_u) in enumerate(spec.extras):
        ex_xi = np.asarray(ex_xi, float).reshape(N + 1, 1, n)
        if ex_u is None:
            ex_U = np.zeros((K, 1, m))
        elif isinstance(ex_u, InputSignal):
            ex_U = ex_u(delta * (np.arange(K) + 0.5))[:, None, :]
        else:
            ex_U = np.asarray(ex_u, float).reshape(K, 1, m)
        parts_xi.append(ex_xi)
        parts_U.append(ex_U)
        labels.append(f"extra[{j}]")
    return EnsembleDraw(np.concatenate(parts_xi, axis=1), np.concatenate(parts_U, axis=1), labels, spec, delta)


def run_batches(
    model,
    xi: np.ndarray,
    U: Optional[np.ndarray],
    cfg: SimConfig,
    control_factory: Optional[Callable[[slice], Callable]] = None,
    threads: Optional[int] = None,
    chunk: int = CHUNK,
) -> BatchResult:
    """simulate_batch over fixed-size chunks, merged in member order."""
    B = xi.shape[1]
    slices = [slice(s, min(s + chunk, B)) for s in range(0, B, chunk)] or [slice(0, 0)]
    threads = default_threads() if threads is None else max(1, int(threads))

    def one(sl):
        ctrl = control_factory(sl) if control_factory is not None else None
        try:
            return simulate_batch(model, xi[:, sl], cfg, inputs=None if U is None or ctrl else U[:, sl], control=ctrl)
        except BlowUp as exc:
            raise BlowUp(exc.t, exc.member + sl.start, exc.norm) from None

    if threads == 1 or len(slices) == 1:
        parts = [one(sl) for sl in slices]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(one, slices))
    if len(parts) == 1:
        return parts[0]
    first = parts[0]
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts], axis=1)
    ho = cat("history_outputs") if first.history_outputs is not None else None
    return BatchResult(first.theta, first.steps_per_delay, cat("full"), cat("outputs"), ho, cat("applied"))


def run_ensemble(model, draw: EnsembleDraw, threads: Optional[int] = None, control_factory=None) -> BatchResult:
    return run_batches(model, draw.xi, draw.U, draw.spec.sim_config(), control_factory, threads)
