"""Output redefinition: lower estimates of

    h_bar(xi) = sup_{t >= 0, u} ( |y(t, xi, u)| - gamma(||u||) )

by finite search over piecewise-constant inputs, plus bracket-aware
validation of the redefined output along trajectories.

The search domain is made compact in two ways: inputs live in the ball
||u|| <= gamma^{-1}(beta(||xi||, 0)) and times in [0, t_xi] with
t_xi = T(||xi||, h_est / 2) from the decay-time family of beta. Every
reported value is attained by a concrete (t, u), so it is a lower bound of
the true supremum; beta(||xi||, 0) is the matching upper bracket.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .certify.ensemble import EnsembleSpec, default_threads, draw_ensemble, run_ensemble, steps_to_signal
from .dde.integrator import SimConfig, simulate_batch
from .errors import ConfigError, NoCertificate
from .funclib import ComparisonFunction, DecayTimeFamily, KLFunction, invert
from .signals import HistorySegment, InputSignal

EVAL_CHUNK = 256


@dataclass(frozen=True)
class SearchSpec:
    segments: int = 5
    magnitudes: int = 11
    directions: int = 8
    restarts: int = 2
    sweeps: int = 2
    max_rounds: int = 8
    seed: int = 0
    steps_per_delay: int = 64
    t_cap: float = 50.0
    #: when |h(xi)| = 0 the first horizon uses s = s_floor * beta(||xi||, 0)
    s_floor: float = 1e-3

    def __post_init__(self):
        for k in ("segments", "magnitudes", "restarts", "sweeps", "max_rounds", "steps_per_delay"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be >= 1", k)
        if self.magnitudes < 2:
            raise ConfigError("need at least two magnitudes (zero and the ball radius)", "levels")
        if not self.t_cap > 0:
            raise ConfigError("t_cap must be positive", "t_cap")

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class RedefinitionSpec:
    beta: KLFunction
    gamma: ComparisonFunction
    search: SearchSpec = field(default_factory=SearchSpec)

    def __post_init__(self):
        if self.beta is None or self.gamma is None:
            raise NoCertificate("output redefinition needs an IOS certificate (beta, gamma) in max form")

    @property
    def beta0(self) -> ComparisonFunction:
        return self.beta.at_time(0.0)


@dataclass(eq=False)
class HbarEstimate:
    value: float
    t_star: float
    u_star: InputSignal
    lower: float
    upper: float
    iterations: int
    horizon: float
    xi_norm: float
    h_norm: float
    evaluated: int = 0

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "maximizer": {"t": self.t_star, "u": self.u_star.to_literal()},
            "brackets": {"lower": self.lower, "upper": self.upper},
            "iterations": self.iterations,
            "horizon": self.horizon,
            "xi_norm": self.xi_norm,
            "h_norm": self.h_norm,
            "evaluated_inputs": self.evaluated,
        }


def level_table(m: int, magnitudes: int, directions: int) -> np.ndarray:
    """Unit-ball level grid: zero plus each positive magnitude times each direction."""
    mags = np.linspace(0.0, 1.0, magnitudes)[1:]
    if m == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif m == 2:
        ang = 2.0 * np.pi * np.arange(directions) / directions
        dirs = np.stack((np.cos(ang), np.sin(ang)), axis=1)
    else:
        eye = np.eye(m)
        dirs = np.concatenate((eye, -eye))
    lv = [np.zeros(m)]
    for a in mags:
        lv.extend(a * d for d in dirs)
    return np.array(lv)


# ---- batched objective ----------------------------------------------------------

def _objective(model, xi, U, limit, gamma, N, threads):
    """For each member: max_k (|y(t_k)| - gamma(||u||_[0,t_k))) over k <= limit.

    Returns (J, k_star). Members are simulated in fixed-size chunks and only
    the reduction is kept.
    """
    B = xi.shape[1]
    Ksim = U.shape[0]
    delta = model.theta / N
    cfg = SimConfig(Ksim * delta, N)
    slices = [slice(s, min(s + EVAL_CHUNK, B)) for s in range(0, B, EVAL_CHUNK)]

    def one(sl):
        res = simulate_batch(model, xi[:, sl], cfg, inputs=U[:, sl])
        y = res.output_norms
        un = np.linalg.norm(U[:, sl], axis=2)
        pm = np.zeros_like(y)
        if Ksim:
            pm[1:] = np.maximum.accumulate(un, axis=0)
        J = y - np.asarray(gamma(pm), float)
        steps = np.arange(Ksim + 1)[:, None]
        J = np.where(steps <= limit[sl][None, :], J, -np.inf)
        k = np.argmax(J, axis=0)
        return J[k, np.arange(J.shape[1])], k

    if not slices:
        return np.zeros(0), np.zeros(0, int)
    threads = max(1, threads)
    if threads == 1 or len(slices) == 1:
        parts = [one(s) for s in slices]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(one, slices))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _seg_inputs(levels_x, assign, edges, Ksim, m):
    """Per-step inputs (Ksim, B, m) from per-member segment assignments."""
    B = len(assign)
    U = np.zeros((Ksim, B, m))
    for b in range(B):
        e = edges[b]
        for s in range(len(e) - 1):
            if e[s + 1] > e[s]:
                U[e[s] : e[s + 1], b] = levels_x[b][assign[b][s]]
    return U


@dataclass
class _Run:
    x: int
    rung: int
    assign: np.ndarray
    best: float = -np.inf
    hsteps: int = 0
    done: bool = False
    rounds: int = 0


def estimate_hbar_batch(model, xis: np.ndarray, spec: RedefinitionSpec, extras=None,
                        threads: Optional[int] = None) -> list[HbarEstimate]:
    """Lower estimates of h_bar for X histories given as (N + 1, X, n).

    ``extras[i]`` may list additional per-step input arrays (K_i, m) that
    are evaluated on their full length for history i.
    """
    S = spec.search
    N = S.steps_per_delay
    xis = np.asarray(xis, float)
    if xis.ndim == 2:
        xis = xis[:, None, :]
    if xis.shape[0] != N + 1:
        raise ConfigError(f"histories need {N + 1} grid samples, got {xis.shape[0]}", "xi")
    X, m = xis.shape[1], model.m
    threads = default_threads() if threads is None else threads
    delta = model.theta / N
    r = np.max(np.linalg.norm(xis, axis=2), axis=0)
    h = model.output_norm0(xis)
    b0 = np.asarray(spec.beta(r, np.zeros_like(r)), float)
    umax = np.zeros(X)
    pos = b0 > 0
    if np.any(pos):
        umax[pos] = np.asarray(invert(spec.gamma, b0[pos]), float)
    unit = level_table(m, S.magnitudes, S.directions)
    L = unit.shape[0]
    levels = unit[None, :, :] * umax[:, None, None]
    family = DecayTimeFamily(spec.beta)
    cap_steps = int(math.ceil(S.t_cap / delta - 1e-9))

    def horizon_steps(x, v):
        s = max(v, S.s_floor * b0[x])
        t = float(family(r[x], 0.5 * s))
        if not math.isfinite(t):
            return cap_steps
        return int(min(cap_steps, max(1, math.ceil(t / delta - 1e-9))))

    best = h.copy()
    best_t = np.zeros(X)
    best_u = [np.zeros((0, m)) for _ in range(X)]
    evaluated = np.ones(X, int)
    rounds_used = np.zeros(X, int)
    h0_steps = np.array([horizon_steps(x, h[x]) if pos[x] else 0 for x in range(X)])

    def absorb(xs, J, k, U_cols):
        for j, x in enumerate(xs):
            evaluated[x] += 1
            if J[j] > best[x]:
                best[x] = J[j]
                best_t[x] = k[j] * delta
                best_u[x] = U_cols[: k[j], j].copy()

    # deterministic candidates: constant levels on the first (longest) horizon
    active = np.nonzero(pos)[0]
    if active.size:
        Ksim = int(h0_steps[active].max())
        xs = np.repeat(active, L)
        U = np.broadcast_to(levels[active][None], (Ksim, active.size, L, m)).reshape(Ksim, -1, m).copy()
        J, k = _objective(model, xis[:, xs], U, np.repeat(h0_steps[active], L), spec.gamma, N, threads)
        absorb(xs, J, k, U)

    # multi-start coordinate ascent, one independent run per (history, segment count, restart)
    runs: list[_Run] = []
    for x in active:
        for rung in range(1, S.segments + 1):
            for q in range(S.restarts):
                rng = np.random.default_rng([S.seed, rung, q])
                runs.append(_Run(int(x), rung, rng.integers(L, size=rung), hsteps=int(h0_steps[x])))

    for _round in range(S.max_rounds):
        live = [rn for rn in runs if not rn.done]
        if not live:
            break
        for rn in live:
            rn.best = -np.inf
            rn.rounds += 1
        for _sweep in range(S.sweeps):
            for seg in range(S.segments):
                part = [rn for rn in live if rn.rung > seg]
                if not part:
                    continue
                Ksim = max(rn.hsteps for rn in part)
                xs, assigns, edges, lvls, limits = [], [], [], [], []
                for rn in part:
                    e = np.round(np.linspace(0, rn.hsteps, rn.rung + 1)).astype(int)
                    for l in range(L):
                        a = rn.assign.copy()
                        a[seg] = l
                        xs.append(rn.x)
                        assigns.append(a)
                        edges.append(e)
                        lvls.append(levels[rn.x])
                        limits.append(rn.hsteps)
                U = _seg_inputs(lvls, assigns, edges, Ksim, m)
                xs = np.array(xs)
                J, k = _objective(model, xis[:, xs], U, np.array(limits), spec.gamma, N, threads)
                absorb(xs, J, k, U)
                J = J.reshape(len(part), L)
                for i, rn in enumerate(part):
                    l = int(np.argmax(J[i]))
                    if J[i, l] > rn.best:
                        rn.best = float(J[i, l])
                        rn.assign[seg] = l
        for rn in live:
            new = horizon_steps(rn.x, max(rn.best, h[rn.x]))
            rounds_used[rn.x] = max(rounds_used[rn.x], rn.rounds)
            if new == rn.hsteps:
                rn.done = True
            rn.hsteps = new

    if extras is not None:
        items = [(x, np.asarray(u, float).reshape(-1, m)) for x in range(X) for u in (extras[x] or [])]
        if items:
            Ksim = max(u.shape[0] for _, u in items)
            U = np.zeros((Ksim, len(items), m))
            for j, (_, u) in enumerate(items):
                U[: u.shape[0], j] = u
            xs = np.array([x for x, _ in items])
            lim = np.array([u.shape[0] for _, u in items])
            J, k = _objective(model, xis[:, xs], U, lim, spec.gamma, N, threads)
            absorb(xs, J, k, U)

    out = []
    for x in range(X):
        u_sig = steps_to_signal(best_u[x], delta) if best_u[x].shape[0] else InputSignal.zero(m, 0.0)
        out.append(
            HbarEstimate(
                value=float(best[x]),
                t_star=float(best_t[x]),
                u_star=u_sig,
                lower=float(best[x]),
                upper=float(b0[x]),
                iterations=int(rounds_used[x]),
                horizon=float(h0_steps[x] * delta),
                xi_norm=float(r[x]),
                h_norm=float(h[x]),
                evaluated=int(evaluated[x]),
            )
        )
    return out


def estimate_hbar(model, xi: HistorySegment, spec: RedefinitionSpec, threads: Optional[int] = None) -> HbarEstimate:
    if spec is None:
        raise NoCertificate("output redefinition needs an IOS certificate (beta, gamma)")
    if xi.steps != spec.search.steps_per_delay:
        raise ConfigError(
            f"history has {xi.steps} steps per delay, search uses {spec.search.steps_per_delay}", "steps_per_delay"
        )
    return estimate_hbar_batch(model, xi.samples[:, None, :], spec, threads=threads)[0]


# ---- validation ----------------------------------------------------------------------

@dataclass(eq=False)
class RedefinitionReport:
    verdict: str  # satisfied-on-ensemble | violated | inconclusive
    ios_worst_slack: float
    ol_worst_slack: float
    ol_upper_slack: float
    sandwich_worst_slack: float
    witness: dict
    ensemble: dict
    search: dict
    taus: list
    checked: int
    inconclusive: int

    @property
    def satisfied(self) -> bool:
        return self.verdict == "satisfied-on-ensemble"

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "ios_worst_slack": self.ios_worst_slack,
            "ol_worst_slack": self.ol_worst_slack,
            "ol_upper_slack": self.ol_upper_slack,
            "sandwich_worst_slack": self.sandwich_worst_slack,
            "witness": self.witness,
            "ensemble": self.ensemble,
            "search": self.search,
            "taus": self.taus,
            "checked": self.checked,
            "inconclusive": self.inconclusive,
        }


def validate_redefinition(model, spec: RedefinitionSpec, ensemble: EnsembleSpec, taus=(0.0, 1.0),
                          tol: float = 1e-9, threads: Optional[int] = None) -> RedefinitionReport:
    """Check along trajectories, at each tau:

    (i)  h_bar(x_tau) <= beta(||xi||, tau) + gamma(||u||_[0,tau))
    (ii) h_bar(x_tau) <= h_bar(xi) + gamma(||u||_[0,tau))

    Left sides are lower estimates. A failure of (i) is a genuine violation.
    For (ii) the right side is also a lower estimate, so a failure is only
    conclusive when it persists against the upper bracket beta(||xi||, 0);
    otherwise it is reported as inconclusive. The search for h_bar(xi)
    includes u #_tau v*, where v* is the maximizer found from x_tau.
    """
    S = spec.search
    if ensemble.steps_per_delay != S.steps_per_delay:
        raise ConfigError("ensemble and search must use the same steps_per_delay", "steps_per_delay")
    N = S.steps_per_delay
    delta = model.theta / N
    taus = sorted({float(t) for t in taus})
    tau_steps = [int(round(t / delta)) for t in taus]
    if any(abs(k * delta - t) > 1e-9 * max(1.0, t) for k, t in zip(tau_steps, taus)):
        raise ConfigError("every tau must be a grid time", "taus")
    run_spec = EnsembleSpec(**{**ensemble.__dict__, "horizon": max(max(taus), delta)})
    draw = draw_ensemble(model, run_spec)
    res = run_ensemble(model, draw, threads)
    B = draw.size
    full = res.full

    xt = np.concatenate([full[k : k + N + 1] for k in tau_steps], axis=1)  # (N+1, T*B, n)
    est_tau = estimate_hbar_batch(model, xt, spec, threads=threads)

    extras = [[] for _ in range(B)]
    for ti, k in enumerate(tau_steps):
        for b in range(B):
            e = est_tau[ti * B + b]
            v = np.asarray(e.u_star(delta * (np.arange(int(round(e.t_star / delta))) + 0.5))) if e.t_star > 0 else np.zeros((0, model.m))
            v = v.reshape(-1, model.m)
            tail = max(int(round(e.t_star / delta)), 0)
            cat = np.zeros((k + tail, model.m))
            cat[:k] = draw.U[:k, b]
            if tail:
                cat[k:] = v[:tail] if v.shape[0] >= tail else np.pad(v, ((0, tail - v.shape[0]), (0, 0)))
            extras[b].append(cat)
    est_xi = estimate_hbar_batch(model, full[: N + 1], spec, extras=extras, threads=threads)

    un = np.linalg.norm(draw.U, axis=2)  # (K, B)
    ios_w = ol_w = olu_w = sand_w = math.inf
    witness = {}
    incon = 0
    violated = False
    for ti, (tau, k) in enumerate(zip(taus, tau_steps)):
        for b in range(B):
            lhs = est_tau[ti * B + b].lower
            ex = est_xi[b]
            g = float(spec.gamma(float(un[:k, b].max()) if k else 0.0))
            s1 = float(spec.beta(ex.xi_norm, tau)) + g - lhs
            s2 = ex.lower + g - lhs
            s2u = ex.upper + g - lhs
            if s1 < ios_w:
                ios_w = s1
                if s1 < -tol:
                    witness = {"check": "ios", "member": b, "tau": tau, "hbar_tau": lhs, "slack": s1}
            if s2 < ol_w:
                ol_w = s2
            olu_w = min(olu_w, s2u)
            if s1 < -tol or s2u < -tol:
                violated = True
                if s2u < -tol and not witness:
                    witness = {"check": "ol", "member": b, "tau": tau, "hbar_tau": lhs, "slack": s2u}
            elif s2 < -tol:
                incon += 1
    for e in list(est_tau) + list(est_xi):
        sand_w = min(sand_w, e.lower - e.h_norm, e.upper + 1e-9 - e.lower)
    if sand_w < -tol:
        violated = True
    verdict = "violated" if violated else ("inconclusive" if incon else "satisfied-on-ensemble")
    return RedefinitionReport(
        verdict=verdict,
        ios_worst_slack=ios_w,
        ol_worst_slack=ol_w,
        ol_upper_slack=olu_w,
        sandwich_worst_slack=sand_w,
        witness=witness,
        ensemble=run_spec.to_json(),
        search=S.to_json(),
        taus=taus,
        checked=B * len(taus),
        inconclusive=incon,
    )


def hbar_difference_quotients(model, xis: np.ndarray, spec: RedefinitionSpec, threads: Optional[int] = None) -> dict:
    """Empirical moduli |h_bar(a) - h_bar(b)| / ||a - b|| over all pairs of the given histories.

    Purely descriptive: both values are lower estimates, so the quotients
    say nothing certain about Lipschitz continuity.
    """
    xis = np.asarray(xis, float)
    est = estimate_hbar_batch(model, xis, spec, threads=threads)
    vals = np.array([e.value for e in est])
    B = xis.shape[1]
    q = []
    for i in range(B):
        for j in range(i + 1, B):
            d = float(np.max(np.linalg.norm(xis[:, i] - xis[:, j], axis=1)))
            if d > 0:
                q.append(abs(vals[i] - vals[j]) / d)
    q = np.asarray(q)
    return {
        "pairs": int(q.size),
        "max": float(q.max()) if q.size else 0.0,
        "median": float(np.median(q)) if q.size else 0.0,
        "values": vals.tolist(),
    }
