"""Constructive comparison-function lemmas.

Each construction returns ordinary :class:`ComparisonFunction` /
:class:`KLFunction` objects so the results compose with everything else.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptySampleSet, EnvelopeDiverged, NonConvergent
from .core import (
    LOG_GRID,
    ComparisonFunction,
    KLFunction,
    invert,
    isotonic_increasing,
    power_map,
    table_function,
)


@dataclass(frozen=True)
class FactorGrid:
    r: np.ndarray = field(default_factory=lambda: np.logspace(-6, 6, 200))
    t: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 40.0, 801))
    tail_fraction: float = 0.1


@dataclass(frozen=True)
class SontagFactorization:
    """p(beta(r, t)) <= q(r) e^{-t} with p(v) = v**k."""

    p: ComparisonFunction
    q: ComparisonFunction
    k: int
    #: True when no power map gives a bounded envelope; the inequality then
    #: holds only for t inside the construction grid.
    grid_only: bool
    grid: FactorGrid

    def slack(self, beta: KLFunction, r, t):
        """q(r) e^{-t} - p(beta(r, t)); nonnegative where the factorization holds."""
        r, t = np.broadcast_arrays(np.asarray(r, float), np.asarray(t, float))
        return self.q(r) * np.exp(-t) - self.p(beta(r, t))


def _envelope(beta: KLFunction, k: int, grid: FactorGrid):
    R, T = np.meshgrid(grid.r, grid.t, indexing="ij")
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        g = np.exp(T) * np.power(beta(R, T), k)
    return g


def sontag_factorize(beta: KLFunction, grid: FactorGrid | None = None, k_max: int = 8) -> SontagFactorization:
    """Find p(v) = v^k and q in K-infinity with p(beta(r,t)) <= q(r) e^{-t}.

    q is the envelope max_t e^t p(beta(r, t)) on the grid, interpolated as a
    piecewise power law (exact for power-law envelopes). The smallest k whose
    envelope stops growing over the tail of the time grid is chosen; when no
    k <= k_max achieves that (e.g. polynomial decay), k = 1 is used and the
    result is flagged ``grid_only``.
    """
    grid = grid or FactorGrid()
    n_tail = max(2, int(round(grid.tail_fraction * grid.t.size)))
    chosen = None
    fallback = None
    for k in range(1, k_max + 1):
        g = _envelope(beta, k, grid)
        if not np.all(np.isfinite(g)):
            continue
        if fallback is None:
            fallback = (k, g)
        head = np.max(g[:, :-n_tail], axis=1)
        tail = np.max(g[:, -n_tail:], axis=1)
        if np.all(tail <= head * (1.0 + 1e-9)):
            chosen = (k, g)
            break
    grid_only = chosen is None
    if chosen is None:
        if fallback is None:
            raise EnvelopeDiverged(f"no k <= {k_max} gives a finite envelope for {beta.name}")
        chosen = fallback
    k, g = chosen
    qk = isotonic_increasing(np.max(g, axis=1))
    r = np.asarray(grid.r, float)
    keep = (r > 0) & (qk > 0)
    if np.count_nonzero(keep) < 2:
        raise EnvelopeDiverged(f"envelope of {beta.name} vanishes on the grid")
    q = table_function(r[keep], qk[keep], kind="loglog", class_tag="Kinf", name=f"q[{beta.name}]")
    return SontagFactorization(p=power_map(k), q=q, k=k, grid_only=grid_only, grid=grid)


def lagrange_convert(sigma: ComparisonFunction, beta: KLFunction, grid: FactorGrid | None = None):
    """Return (beta_hat, rho_hat) with min{sigma(s), beta(r,t)} <= beta_hat(s, t / (1 + rho_hat(r))).

    Follows the factorization argument: alpha(beta(r,t)) <= rho(r) e^{-3t},
    sigma~ = max{sqrt(alpha o sigma), e * alpha o sigma},
    beta_hat(s, tau) = alpha^{-1}(sigma~(s) e^{-tau}), rho_hat = ln(1 + rho).
    """
    grid = grid or FactorGrid()
    fac = sontag_factorize(beta.rescaled_time(3.0), grid)
    alpha, rho = fac.p, fac.q

    def sigma_tilde(s):
        a = alpha.fn(np.asarray(sigma.fn(s), dtype=float))
        return np.maximum(np.sqrt(a), math.e * a)

    def beta_hat(s, tau):
        return alpha.inverse(sigma_tilde(s) * np.exp(-tau))

    rho_hat = ComparisonFunction(lambda r: np.log1p(rho.fn(r)), "K", f"ln(1+{rho.name})")
    return KLFunction(beta_hat, f"lagrange[{sigma.name},{beta.name}]"), rho_hat, fac


@dataclass(frozen=True)
class DecayTimeFamily:
    """T(r, s) with beta(r, t) < s for all t >= T(r, s).

    Raw times come from bisection on beta(r, t) = s/2; adding ln(1 + r/s)
    makes T strictly increasing in r, strictly decreasing and onto in s,
    with T(0, s) = 0.
    """

    beta: KLFunction
    t_max: float = 1e12

    def raw(self, r, s):
        r, s = np.broadcast_arrays(np.asarray(r, float), np.asarray(s, float))
        r, s = r.ravel(), s.ravel()
        target = 0.5 * s
        out = np.zeros_like(r)
        todo = np.asarray(self.beta(r, np.zeros_like(r)), float) > target
        if not np.any(todo):
            return out
        rr, tt = r[todo], target[todo]
        lo = np.zeros_like(rr)
        hi = np.ones_like(rr)
        need = np.asarray(self.beta(rr, hi), float) > tt
        while np.any(need):
            lo[need] = hi[need]
            hi[need] *= 2.0
            if np.any(hi > self.t_max):
                raise NonConvergent(f"{self.beta.name} does not fall below target within t <= {self.t_max:g}")
            need = np.asarray(self.beta(rr, hi), float) > tt
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            above = np.asarray(self.beta(rr, mid), float) > tt
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
            if np.all(hi - lo <= 1e-12 * np.maximum(1.0, hi)):
                break
        out[todo] = hi
        return out

    def __call__(self, r, s):
        r_arr, s_arr = np.broadcast_arrays(np.asarray(r, float), np.asarray(s, float))
        shape = r_arr.shape
        with np.errstate(divide="ignore", invalid="ignore"):
            smooth = np.where(r_arr > 0, np.log1p(r_arr / s_arr), 0.0)
        pos = s_arr.ravel() > 0
        out = np.full(r_arr.size, np.inf)
        out[~pos & (r_arr.ravel() == 0)] = 0.0
        if np.any(pos):
            out[pos] = self.raw(r_arr.ravel()[pos], s_arr.ravel()[pos]) + smooth.ravel()[pos]
        out = out.reshape(shape)
        return out if out.ndim else float(out)


def decay_time_family(beta: KLFunction, t_max: float = 1e12) -> DecayTimeFamily:
    return DecayTimeFamily(beta, t_max)


def synthesize_margin(sigma: ComparisonFunction, n_knots: int = 400) -> ComparisonFunction:
    """Smooth lambda in K-infinity with sigma(lambda(sigma(s))) < s/4.

    lambda(v) = 1/2 sigma^{-1}(sigma^{-1}(v) / 4), tabulated on a log grid
    covering sigma's range over [1e-6, 1e6] and interpolated by a monotone
    C^1 cubic in log-log coordinates with power-law tails.
    """
    lo = float(sigma(LOG_GRID[0]))
    hi = float(sigma(LOG_GRID[-1]))
    v = np.logspace(math.log10(lo) - 2.0, math.log10(hi) + 2.0, n_knots)
    inner = np.asarray(invert(sigma, v), dtype=float)
    lam = 0.5 * np.asarray(invert(sigma, inner / 4.0), dtype=float)
    return table_function(v, lam, kind="pchip", class_tag="Kinf", name=f"margin[{sigma.name}]")


def margin_exact(sigma: ComparisonFunction):
    """Untabulated reference: v -> 1/2 sigma^{-1}(sigma^{-1}(v) / 4)."""
    return lambda v: 0.5 * np.asarray(invert(sigma, np.asarray(invert(sigma, v), float) / 4.0), float)


@dataclass(frozen=True)
class RFCEnvelope:
    chi: ComparisonFunction
    c: float
    #: staircase rho(r) = sup{|x| : t, ||xi||, ||u|| <= r}
    keys: np.ndarray
    rho: np.ndarray

    def bound(self, t, xi_norm, u_norm):
        return self.chi(t) + self.chi(xi_norm) + self.chi(u_norm) + self.c


def build_rfc_envelope(samples) -> RFCEnvelope:
    """Envelope chi, c with |x(t)| <= chi(t) + chi(||xi||) + chi(||u||) + c on all samples.

    ``samples`` rows are (t, ||xi||, ||u||, |x(t)|). rho is the staircase
    sup over samples with max(t, ||xi||, ||u||) <= r; rho_1(r) is its exact
    integral over [r, r+1] and chi = rho_1 - rho_1(0), c = rho_1(0).
    """
    s = np.asarray(samples, dtype=float)
    if s.size == 0:
        raise EmptySampleSet("no samples to build an RFC envelope from")
    s = s.reshape(-1, 4)
    key = np.max(s[:, :3], axis=1)
    order = np.argsort(key, kind="stable")
    key, val = key[order], s[order, 3]
    # collapse equal keys, keep the running sup
    uniq, first = np.unique(key, return_index=True)
    run = np.maximum.accumulate(val)
    last = np.append(first[1:], key.size) - 1
    rho = run[last]
    # F(r) = int_0^r rho: piecewise linear with knots at the jumps
    knots = np.append(uniq, uniq[-1] + 1.0)
    seg = np.diff(knots) * rho
    F = np.concatenate(([0.0], np.cumsum(seg)))
    if uniq[0] > 0:
        knots = np.concatenate(([0.0], knots))
        F = np.concatenate(([0.0], F))
    top = rho[-1]

    def integral(r):
        r = np.asarray(r, dtype=float)
        inside = np.interp(r, knots, F)
        return np.where(r > knots[-1], F[-1] + top * (r - knots[-1]), inside)

    c = float(integral(1.0))

    def chi_fn(r):
        r = np.asarray(r, dtype=float)
        return np.maximum(integral(r + 1.0) - integral(r) - c, 0.0)

    chi = ComparisonFunction(chi_fn, "N", "rfc-chi")
    return RFCEnvelope(chi=chi, c=c, keys=uniq, rho=rho)
