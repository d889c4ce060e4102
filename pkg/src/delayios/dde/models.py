"""System models and the built-in registry."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import ConfigError
from ..funclib import ComparisonFunction, identity, parse_function


@dataclass(frozen=True, eq=False)
class SystemModel:
    """x' = f(x_t, u), y = h(x_t), all evaluated on batches.

    ``f(window, u)`` returns (B, n); ``h(window)`` returns (B, p). When the
    output only reads the current state, ``h0`` maps (..., n) -> (..., p)
    and ``h`` may be omitted.
    """

    name: str
    n: int
    m: int
    p: int
    theta: float
    f: Callable
    h: Optional[Callable] = None
    h0: Optional[Callable] = None
    pi: Optional[ComparisonFunction] = None
    #: draws histories with h(xi) = 0: (rng, count, radius, steps) -> (N+1, B, n)
    zero_output_sampler: Optional[Callable] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.h is None:
            if self.h0 is None:
                raise ConfigError(f"model {self.name!r} needs h or h0", "model")
            h0 = self.h0
            object.__setattr__(self, "h", lambda w: h0(w.x))
        if not self.theta > 0:
            raise ConfigError(f"delay must be positive, got {self.theta}", "theta")

    @property
    def delay_free(self) -> bool:
        return self.h0 is not None

    def output_norm0(self, xi: np.ndarray) -> np.ndarray:
        """|h(xi)| for histories of shape (N+1, B, n); needs only xi(0) when h0 exists."""
        from .integrator import Window, _norm

        xi = np.asarray(xi, float)
        if self.h0 is not None:
            return _norm(np.asarray(self.h0(xi[-1]), float).reshape(xi.shape[1], self.p))
        w = Window(0.0, self.theta, xi[-1], xi[0],
                   np.max(_norm(xi[1:-1]), axis=0) if xi.shape[0] > 2 else None,
                   np.max(np.abs(xi[1:-1]), axis=0) if xi.shape[0] > 2 else None)
        return _norm(np.asarray(self.h(w), float).reshape(xi.shape[1], self.p))

    def history_output_norm(self, xi: np.ndarray) -> np.ndarray:
        """H(xi) = max over the grid of |h0(xi(s))|."""
        if self.h0 is None:
            from ..errors import NoDelayFreeOutput

            raise NoDelayFreeOutput(f"model {self.name!r} has no delay-free output")
        xi = np.asarray(xi, float)
        y = np.asarray(self.h0(xi.reshape(-1, self.n)), float).reshape(xi.shape[0], xi.shape[1], self.p)
        return np.max(np.sqrt(np.sum(y * y, axis=-1)), axis=0)

    def check_output_bound(self, xi: np.ndarray, tol: float = 1e-12):
        """(ok, worst) for |h(xi)| <= pi(||xi||) on the given histories."""
        if self.pi is None:
            return True, float("inf")
        xi = np.asarray(xi, float)
        norms = np.max(np.sqrt(np.sum(xi * xi, axis=-1)), axis=0)
        slack = np.asarray(self.pi(norms), float) - self.output_norm0(xi)
        worst = float(np.min(slack))
        return worst >= -tol, worst


def _col(a, i):
    return a[..., i]


# ---- built-ins --------------------------------------------------------------

def _ex_raz(theta=0.1, output="x"):
    def f(w, u):
        p = w.x[:, 0]
        dx = (-w.delayed[:, 1] + u[:, 0]) / (1.0 + p * p)
        return np.stack((np.zeros_like(p), dx), axis=1)

    if output == "x":
        h0 = lambda s: s[..., 1:2]
        pi = identity()
    elif output == "V":
        h0 = lambda s: 0.5 * s[..., 1:2] ** 2
        pi = parse_function("power:2,0.5")
    else:
        raise ConfigError(f"ex-raz output must be 'x' or 'V', got {output!r}", "output")

    def zero_sampler(rng, count, radius, steps, p_values=None):
        # x(0) = 0 with a free p component and a free x history before 0
        return _random_histories(rng, count, radius, steps, 2, zero_at_end=[1])

    return SystemModel("ex-raz", 2, 1, 1, theta, f, h0=h0, pi=pi, zero_output_sampler=zero_sampler,
                       params={"theta": theta, "output": output})


def _ex_redef(theta=0.5, output="x3"):
    def f(w, u):
        x1, x2, x3 = w.x[:, 0], w.x[:, 1], w.x[:, 2]
        g = 1.0 / (1.0 + x1 * x1)
        s2 = w.sup ** 2
        return np.stack(
            (
                -x1 + w.delayed[:, 0],
                -x2 * g - x3 * s2,
                -x3 * g + x2 * s2 + u[:, 0] * g,
            ),
            axis=1,
        )

    if output == "x3":
        h0 = lambda s: s[..., 2:3]
        pi = identity()
        zero_idx = [2]
    elif output == "W2":
        h0 = lambda s: 0.5 * (s[..., 1:2] ** 2 + s[..., 2:3] ** 2)
        pi = parse_function("power:2,0.5")
        zero_idx = [1, 2]
    else:
        raise ConfigError(f"ex-redef output must be 'x3' or 'W2', got {output!r}", "output")

    def zero_sampler(rng, count, radius, steps):
        return _random_histories(rng, count, radius, steps, 3, zero_at_end=zero_idx)

    return SystemModel("ex-redef", 3, 1, 1, theta, f, h0=h0, pi=pi, zero_output_sampler=zero_sampler,
                       params={"theta": theta, "output": output})


def _linear_dde(theta=0.5, output="x"):
    def f(w, u):
        return -w.delayed + u

    def zero_sampler(rng, count, radius, steps):
        return _random_histories(rng, count, radius, steps, 1, zero_at_end=[0])

    return SystemModel("linear-dde", 1, 1, 1, theta, f, h0=lambda s: s[..., 0:1], pi=identity(),
                       zero_output_sampler=zero_sampler, params={"theta": theta, "output": output})


def _delay_free_lin(theta=1.0, output="x"):
    def f(w, u):
        return -w.x + u

    def zero_sampler(rng, count, radius, steps):
        return _random_histories(rng, count, radius, steps, 1, zero_at_end=[0])

    return SystemModel("delay-free-lin", 1, 1, 1, theta, f, h0=lambda s: s[..., 0:1], pi=identity(),
                       zero_output_sampler=zero_sampler, params={"theta": theta, "output": output})


def _random_histories(rng, count, radius, steps, n, zero_at_end=()):
    from ..certify.ensemble import random_histories

    xi = random_histories(rng, count, radius, steps, n)
    for i in zero_at_end:
        xi[-1, :, i] = 0.0
    return xi


_BUILTINS = {
    "ex-raz": _ex_raz,
    "ex-redef": _ex_redef,
    "linear-dde": _linear_dde,
    "delay-free-lin": _delay_free_lin,
}


def register_builtin_models() -> dict:
    """Name -> factory(theta=None, output=None) for the shipped systems."""
    return dict(_BUILTINS)


def get_model(name: str, theta: float | None = None, output: str | None = None) -> SystemModel:
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; known: {', '.join(sorted(_BUILTINS))}", "model") from None
    kw = {}
    if theta is not None:
        kw["theta"] = float(theta)
    if output is not None:
        kw["output"] = output
    return factory(**kw)
