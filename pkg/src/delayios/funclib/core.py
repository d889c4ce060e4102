"""Comparison-function objects (classes N, K, K-infinity and KL) and inversion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import UnreachableTarget

CLASS_TAGS = ("N", "K", "Kinf")

#: log-spaced validation grid used for "for all s > 0" claims
LOG_GRID = np.logspace(-6, 6, 200)

INVERSION_RTOL = 1e-10


def _as_float_array(x):
    return np.asarray(x, dtype=float)


@dataclass(frozen=True, eq=False)
class ComparisonFunction:
    """A scalar monotone map r -> fn(r) on [0, inf).

    ``fn`` must be numpy-vectorised. ``inverse`` is an optional closed form used
    by :func:`invert` in place of bisection.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    class_tag: str = "K"
    name: str = "anonymous"
    domain_cap: Optional[float] = None
    inverse: Optional[Callable[[np.ndarray], np.ndarray]] = None
    table: Optional[dict] = field(default=None, repr=False)

    def __post_init__(self):
        if self.class_tag not in CLASS_TAGS:
            raise ValueError(f"class_tag must be one of {CLASS_TAGS}, got {self.class_tag!r}")

    def __call__(self, r):
        r = _as_float_array(r)
        out = np.asarray(self.fn(r), dtype=float)
        if out.shape != r.shape:
            out = np.broadcast_to(out, r.shape).copy()
        return out if out.ndim else float(out)

    def compose(self, inner: "ComparisonFunction", name: str | None = None) -> "ComparisonFunction":
        """Return ``self o inner``."""
        tag = _weakest(self.class_tag, inner.class_tag)
        return ComparisonFunction(
            lambda r: self.fn(np.asarray(inner.fn(r), dtype=float)),
            class_tag=tag,
            name=name or f"{self.name}∘{inner.name}",
        )

    def scaled(self, factor: float) -> "ComparisonFunction":
        inv = None
        if self.inverse is not None and factor > 0:
            inv = lambda y, _i=self.inverse, _f=factor: _i(np.asarray(y) / _f)
        return ComparisonFunction(
            lambda r, _f=factor: _f * self.fn(r), self.class_tag, f"{factor:g}*{self.name}", inverse=inv
        )

    def validate(self, grid=LOG_GRID) -> bool:
        """Check the class invariants on a sampled grid."""
        grid = np.concatenate(([0.0], np.sort(_as_float_array(grid))))
        vals = self(grid)
        if not np.all(np.isfinite(vals)) or abs(vals[0]) > 0:
            return False
        d = np.diff(vals)
        if self.class_tag == "N":
            return bool(np.all(d >= 0))
        return bool(np.all(d > 0))

    def to_json(self, grid=None) -> dict:
        """Serialise as a knot table (exact for table-backed functions)."""
        if self.table is not None:
            return dict(self.table)
        grid = np.concatenate(([0.0], LOG_GRID)) if grid is None else _as_float_array(grid)
        return {
            "kind": "linear",
            "class_tag": self.class_tag,
            "name": self.name,
            "x": [float(v) for v in grid],
            "y": [float(v) for v in self(grid)],
        }


def _weakest(a: str, b: str) -> str:
    order = {"N": 0, "K": 1, "Kinf": 2}
    return a if order[a] <= order[b] else b


@dataclass(frozen=True, eq=False)
class KLFunction:
    """A two-argument map (r, t) -> fn(r, t), class K in r and decaying in t."""

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str = "anonymous"

    def __call__(self, r, t):
        r, t = np.broadcast_arrays(_as_float_array(r), _as_float_array(t))
        out = np.asarray(self.fn(r, t), dtype=float)
        return out if out.ndim else float(out)

    def at_time(self, t: float) -> ComparisonFunction:
        """The K function r -> beta(r, t); ``at_time(0)`` is beta_0."""
        return ComparisonFunction(lambda r, _t=float(t): self.fn(r, np.full_like(r, _t)), "K", f"{self.name}(·,{t:g})")

    def rescaled_time(self, factor: float) -> "KLFunction":
        """(r, t) -> beta(r, t / factor)."""
        return KLFunction(lambda r, t, _f=float(factor): self.fn(r, t / _f), f"{self.name}(·,t/{factor:g})")

    def validate(self, r_grid=None, t_grid=None, tol: float = 1e-6) -> bool:
        r_grid = np.concatenate(([0.0], np.logspace(-3, 3, 40))) if r_grid is None else _as_float_array(r_grid)
        t_grid = np.linspace(0.0, 200.0, 201) if t_grid is None else _as_float_array(t_grid)
        R, T = np.meshgrid(r_grid, t_grid, indexing="ij")
        v = self(R, T)
        if not np.all(np.isfinite(v)) or np.any(v[0] != 0):
            return False
        # class K in r: nondecreasing everywhere, strictly increasing at t = 0
        if np.any(np.diff(v, axis=0) < 0) or np.any(np.diff(v[:, 0]) <= 0):
            return False
        if np.any(np.diff(v, axis=1) > 1e-12 * np.maximum(1.0, np.abs(v[:, :-1]))):
            return False
        return bool(np.all(v[:, -1] <= tol * np.maximum(1.0, v[:, 0])))


def invert(f: ComparisonFunction, y, rtol: float = INVERSION_RTOL, use_closed_form: bool = True):
    """Solve f(x) = y for x >= 0 by bisection with doubling bracket expansion.

    Brackets start at [0, 1] and double until f(hi) >= y. Raises
    :class:`UnreachableTarget` when y exceeds the range validated by
    ``f.domain_cap`` or the expansion overflows.
    """
    y_arr = _as_float_array(y)
    if np.any(y_arr < 0) or not np.all(np.isfinite(y_arr)):
        raise UnreachableTarget(f"inversion target must be finite and >= 0, got {y!r}")
    if f.domain_cap is not None:
        top = f(f.domain_cap)
        if np.any(y_arr > top):
            raise UnreachableTarget(f"target {np.max(y_arr):.6g} exceeds {f.name}({f.domain_cap:g}) = {top:.6g}")
    if use_closed_form and f.inverse is not None:
        x = np.asarray(f.inverse(y_arr), dtype=float)
        return x if x.ndim else float(x)

    flat = y_arr.ravel()
    lo = np.zeros_like(flat)
    hi = np.ones_like(flat)
    cap = f.domain_cap if f.domain_cap is not None else 1e300
    need = f.fn(hi) < flat
    while np.any(need):
        lo[need] = hi[need]
        hi[need] *= 2.0
        if np.any(hi[need] > 2.0 * cap) or not np.all(np.isfinite(hi)):
            raise UnreachableTarget(f"{f.name} does not reach {np.max(flat[need]):.6g}")
        fh = np.asarray(f.fn(hi), dtype=float)
        need = fh < flat
        if np.any(need & ~np.isfinite(fh)):
            raise UnreachableTarget(f"{f.name} is not finite while bracketing")
    # f(lo) < y <= f(hi) (or y == 0 with lo == 0)
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        below = np.asarray(f.fn(mid), dtype=float) < flat
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= 4 * np.finfo(float).eps * np.maximum(hi, 1e-300)):
            break
    x = hi.copy()
    x[flat == 0] = 0.0
    x = x.reshape(y_arr.shape)
    return x if x.ndim else float(x)


def inverse_function(f: ComparisonFunction, name: str | None = None) -> ComparisonFunction:
    """Return f^{-1} as a ComparisonFunction evaluated by :func:`invert`."""
    return ComparisonFunction(
        lambda y, _f=f: np.asarray(invert(_f, np.maximum(y, 0.0)), dtype=float),
        class_tag=f.class_tag,
        name=name or f"{f.name}⁻¹",
        inverse=lambda x, _f=f: _f.fn(np.asarray(x, dtype=float)),
    )


def pointwise_max(*fs: ComparisonFunction, name: str | None = None) -> ComparisonFunction:
    tag = max((f.class_tag for f in fs), key={"N": 0, "K": 1, "Kinf": 2}.get)
    return ComparisonFunction(
        lambda r, _fs=fs: np.maximum.reduce([np.asarray(g.fn(r), dtype=float) for g in _fs]),
        class_tag=tag,
        name=name or "max(" + ",".join(g.name for g in fs) + ")",
    )


def identity() -> ComparisonFunction:
    return ComparisonFunction(lambda r: np.array(r, dtype=float), "Kinf", "id", inverse=lambda y: np.array(y, dtype=float))


def power_map(k: float, scale: float = 1.0) -> ComparisonFunction:
    """scale * r**k with its closed-form inverse."""
    k = float(k)
    scale = float(scale)
    return ComparisonFunction(
        lambda r: scale * np.power(r, k),
        "Kinf",
        f"{scale:g}*r^{k:g}" if scale != 1.0 else f"r^{k:g}",
        inverse=lambda y: np.power(np.asarray(y, dtype=float) / scale, 1.0 / k),
    )


# ---------------------------------------------------------------------------
# Table-backed monotone functions


def isotonic_increasing(y, strict: bool = False) -> np.ndarray:
    """Project samples onto nondecreasing (optionally strictly increasing) sequences."""
    y = np.maximum.accumulate(_as_float_array(y))
    if strict:
        for i in range(1, y.size):
            if y[i] <= y[i - 1]:
                y[i] = np.nextafter(y[i - 1], np.inf) if y[i - 1] != 0 else 1e-300
    return y


def table_function(x, y, kind: str = "loglog", class_tag: str = "K", name: str = "table") -> ComparisonFunction:
    """Monotone function from knots.

    ``kind``:
      * ``linear``    piecewise linear through the origin, constant beyond the last knot
      * ``loglog``    piecewise power law between positive knots with power-law
                      extrapolation on both ends; f(0) = 0
      * ``pchip``     C^1 monotone cubic in log-log coordinates, power-law tails
      * ``staircase`` right-continuous step function
    """
    x = _as_float_array(x)
    y = isotonic_increasing(y, strict=class_tag != "N" and kind != "staircase")
    table = {"kind": kind, "class_tag": class_tag, "name": name, "x": x.tolist(), "y": y.tolist()}
    fn = _table_evaluator(kind, x, y)
    return ComparisonFunction(fn, class_tag=class_tag, name=name, table=table)


def function_from_json(doc: dict) -> ComparisonFunction:
    return table_function(doc["x"], doc["y"], kind=doc["kind"], class_tag=doc["class_tag"], name=doc.get("name", "table"))


def _table_evaluator(kind: str, x: np.ndarray, y: np.ndarray):
    if kind == "linear":
        if x[0] > 0:
            x, y = np.concatenate(([0.0], x)), np.concatenate(([0.0], y))
        return lambda r: np.interp(r, x, y)
    if kind == "staircase":
        def stairs(r):
            idx = np.searchsorted(x, r, side="right") - 1
            return np.where(idx >= 0, y[np.clip(idx, 0, None)], 0.0)
        return stairs
    if kind in ("loglog", "pchip"):
        pos = (x > 0) & (y > 0)
        lx, ly = np.log(x[pos]), np.log(y[pos])
        if lx.size < 2:
            raise ValueError("log-log table needs at least two positive knots")
        lo_slope = (ly[1] - ly[0]) / (lx[1] - lx[0])
        hi_slope = (ly[-1] - ly[-2]) / (lx[-1] - lx[-2])
        if kind == "pchip":
            from scipy.interpolate import PchipInterpolator

            inner = PchipInterpolator(lx, ly, extrapolate=False)
        else:
            inner = lambda q: np.interp(q, lx, ly)

        def ev(r):
            r = np.asarray(r, dtype=float)
            out = np.zeros_like(r)
            nz = r > 0
            q = np.log(r[nz])
            v = np.empty_like(q)
            left, right = q < lx[0], q > lx[-1]
            mid = ~(left | right)
            v[mid] = inner(q[mid])
            v[left] = ly[0] + lo_slope * (q[left] - lx[0])
            v[right] = ly[-1] + hi_slope * (q[right] - lx[-1])
            out[nz] = np.exp(v)
            return out
        return ev
    raise ValueError(f"unknown table kind {kind!r}")


def log_grid_check(pred: Callable[[np.ndarray], np.ndarray], grid=LOG_GRID) -> tuple[bool, float]:
    """Evaluate a vectorised predicate slack on a grid; return (all_ok, worst_slack)."""
    slack = _as_float_array(pred(_as_float_array(grid)))
    worst = float(np.min(slack)) if slack.size else math.inf
    return bool(np.all(slack >= 0)), worst
