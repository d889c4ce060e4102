"""Pointwise checks of stability estimates along simulated ensembles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigError, MissingFunction, NoDelayFreeOutput
from ..funclib import (
    LOG_GRID,
    ComparisonFunction,
    FactorGrid,
    KLFunction,
    log_grid_check,
    sontag_factorize,
    table_function,
)
from .ensemble import EnsembleDraw, EnsembleSpec, draw_ensemble, random_bang_bang, run_batches, run_ensemble

_REQUIRED = {
    "IOS": ("beta", "gamma"),
    "IOS-max": ("beta", "gamma"),
    "OL-GS": ("sigma",),
    "SI-IOS": ("beta", "gamma"),
    "SI-IOS-max": ("beta", "gamma"),
    "OLIOS-compact": ("beta", "rho", "gamma"),
    "OLIOS-compact-max": ("beta", "rho", "gamma"),
    "GS": ("sigma", "gamma"),
    "UBIBS": ("sigma", "gamma"),
    "RFC": ("chi",),
    "OAG": ("gamma",),
    "OGS": ("sigma", "gamma"),
    "RAZ-IOS": ("beta", "kappa", "gamma"),
    "RAZ-OL": ("beta", "rho", "kappa", "gamma"),
    "RAZ-SI": ("beta", "kappa", "gamma"),
}
FORMS = tuple(_REQUIRED)
STATE_FORMS = ("GS", "UBIBS", "RFC")
RAZ_FORMS = ("RAZ-IOS", "RAZ-OL", "RAZ-SI")
OAG_TAIL = 0.2
OAG_TOL = 0.05
DEFAULT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class EstimateCandidate:
    form: str
    beta: Optional[KLFunction] = None
    gamma: Optional[ComparisonFunction] = None
    sigma: Optional[ComparisonFunction] = None
    rho: Optional[ComparisonFunction] = None
    kappa: Optional[ComparisonFunction] = None
    chi: Optional[ComparisonFunction] = None
    c: float = 0.0
    #: use H(xi) (max of |h0| over the initial window) in place of |h(xi)|
    history_norm: bool = False

    def __post_init__(self):
        if self.form not in _REQUIRED:
            raise ConfigError(f"unknown form {self.form!r}; expected one of {', '.join(FORMS)}", "form")

    def require(self):
        missing = [k for k in _REQUIRED[self.form] if getattr(self, k) is None]
        if missing:
            raise MissingFunction(f"form {self.form} needs {', '.join(missing)}")
        if self.form in RAZ_FORMS:
            ok, worst = log_grid_check(lambda s: s - self.kappa(s), LOG_GRID)
            if not ok or worst <= 0:
                raise ConfigError("kappa(s) < s must hold on the log grid [1e-6, 1e6]", "kappa")
        if self.form == "GS" and self.c != 0:
            raise ConfigError("GS is UBIBS with c = 0", "c")

    def describe(self) -> dict:
        out = {"form": self.form, "history_norm": self.history_norm}
        for k in ("beta", "gamma", "sigma", "rho", "kappa", "chi"):
            f = getattr(self, k)
            if f is not None:
                out[k] = f.name
        if self.form in ("UBIBS", "RFC"):
            out["c"] = float(self.c)
        return out


@dataclass(eq=False)
class CertificationReport:
    form: str
    verdict: str  # "satisfied-on-ensemble" | "violated"
    worst_slack: float
    witness: dict
    ensemble: dict
    grids: dict
    candidate: dict
    tolerance: float
    checked_points: int
    extra: dict = field(default_factory=dict)

    @property
    def satisfied(self) -> bool:
        return self.verdict == "satisfied-on-ensemble"

    def to_json(self) -> dict:
        return {
            "form": self.form,
            "verdict": self.verdict,
            "worst_slack": float(self.worst_slack),
            "witness": self.witness,
            "ensemble": self.ensemble,
            "grids": self.grids,
            "candidate": self.candidate,
            "tolerance": float(self.tolerance),
            "checked_points": int(self.checked_points),
            "extra": self.extra,
        }


@dataclass(eq=False)
class Context:
    """Everything a bound needs, shaped (K + 1, B) or broadcastable to it."""

    t: np.ndarray
    y: np.ndarray
    x: np.ndarray
    xi_norm: np.ndarray
    h_norm: np.ndarray
    H: Optional[np.ndarray]
    u_norm: np.ndarray
    runmax: Optional[np.ndarray]


def build_context(model, res, U: Optional[np.ndarray] = None) -> Context:
    N = res.steps_per_delay
    xi = res.full[: N + 1]
    applied = res.applied if U is None else U
    u_norm = np.max(np.linalg.norm(applied, axis=2), axis=0) if applied.shape[0] else np.zeros(res.batch)
    y = res.output_norms
    H = runmax = None
    if model.h0 is not None:
        H = model.history_output_norm(xi)
        runmax = np.maximum(np.maximum.accumulate(y, axis=0), H[None, :])
    return Context(
        t=res.times[:, None],
        y=y,
        x=res.state_norms,
        xi_norm=np.max(np.linalg.norm(xi, axis=2), axis=0)[None, :],
        h_norm=model.output_norm0(xi)[None, :],
        H=None if H is None else H[None, :],
        u_norm=u_norm[None, :],
        runmax=runmax,
    )


def _out0(cand: EstimateCandidate, ctx: Context):
    if cand.history_norm:
        if ctx.H is None:
            raise NoDelayFreeOutput("history-norm estimates need a delay-free output")
        return ctx.H
    return ctx.h_norm


def value_and_bound(cand: EstimateCandidate, ctx: Context):
    """(value, bound) arrays for the candidate's inequality value <= bound."""
    f = cand.form
    if f in STATE_FORMS:
        v = ctx.x
        if f == "RFC":
            b = cand.chi(ctx.t) + cand.chi(ctx.xi_norm) + cand.chi(ctx.u_norm) + cand.c
        else:
            b = cand.sigma(ctx.xi_norm) + cand.gamma(ctx.u_norm) + (cand.c if f == "UBIBS" else 0.0)
        return v, np.broadcast_to(b, v.shape)
    v = ctx.y
    if f == "OAG":
        n_tail = max(1, int(math.ceil(OAG_TAIL * v.shape[0])))
        tail = np.max(v[-n_tail:], axis=0, keepdims=True)
        peak = np.max(v, axis=0, keepdims=True)
        return tail, (1.0 + OAG_TOL) * cand.gamma(ctx.u_norm) + OAG_TOL * peak
    g = cand.gamma(ctx.u_norm) if cand.gamma is not None else 0.0
    if f in ("IOS", "IOS-max"):
        b0 = cand.beta(ctx.xi_norm, ctx.t)
    elif f in ("SI-IOS", "SI-IOS-max"):
        b0 = cand.beta(_out0(cand, ctx), ctx.t)
    elif f in ("OLIOS-compact", "OLIOS-compact-max"):
        b0 = cand.beta(_out0(cand, ctx), ctx.t / (1.0 + cand.rho(ctx.xi_norm)))
    elif f == "OL-GS":
        b = np.maximum(cand.sigma(_out0(cand, ctx)), cand.sigma(ctx.u_norm))
        return v, np.broadcast_to(b, v.shape)
    elif f == "OGS":
        b = np.maximum(cand.sigma(ctx.xi_norm), cand.gamma(ctx.u_norm))
        return v, np.broadcast_to(b, v.shape)
    elif f in RAZ_FORMS:
        if ctx.runmax is None:
            raise NoDelayFreeOutput("Razumikhin premises need a delay-free output")
        if f == "RAZ-IOS":
            b0 = cand.beta(ctx.xi_norm, ctx.t)
        elif f == "RAZ-OL":
            b0 = cand.beta(ctx.H, ctx.t / (1.0 + cand.rho(ctx.xi_norm)))
        else:
            b0 = cand.beta(ctx.H, ctx.t)
        b = np.maximum(np.maximum(b0, cand.kappa(ctx.runmax)), g)
        return v, b
    else:  # pragma: no cover
        raise ConfigError(f"unhandled form {f}", "form")
    b = np.maximum(b0, g) if f.endswith("-max") else b0 + g
    return v, np.broadcast_to(b, v.shape)


def _witness(model, draw_xi, U, delta, labels, i, k, t, value, bound) -> dict:
    from .ensemble import steps_to_signal

    return {
        "model": model.name,
        "member": int(i),
        "label": labels[i] if labels is not None else f"member[{i}]",
        "t": float(t),
        "value": float(value),
        "bound": float(bound),
        "xi": {"samples": np.asarray(draw_xi[:, i]).tolist()},
        "u": steps_to_signal(U[:, i], delta).to_literal() if U is not None and U.shape[0] else {"const": [0.0] * model.m},
    }


def reduce_slack(model, cand, ctx, res, labels, tol, spec_json, extra=None) -> CertificationReport:
    v, b = value_and_bound(cand, ctx)
    slack = np.asarray(b, float) - np.asarray(v, float)
    if slack.size == 0:
        worst, witness = math.inf, {}
    else:
        flat = int(np.argmin(slack))
        k, i = np.unravel_index(flat, slack.shape)
        worst = float(slack[k, i])
        t = float(res.times[k]) if cand.form != "OAG" else float(res.times[-1])
        witness = _witness(model, res.full[: res.steps_per_delay + 1], res.applied, res.step, labels, i, k, t,
                           v[k, i], b[k, i] if np.ndim(b) else b)
    verdict = "violated" if worst < -tol else "satisfied-on-ensemble"
    report = CertificationReport(
        form=cand.form,
        verdict=verdict,
        worst_slack=worst,
        witness=witness,
        ensemble=spec_json,
        grids={"steps_per_delay": res.steps_per_delay, "delta": res.step, "horizon": float(res.times[-1]),
               "kappa_grid": "logspace(-6,6,200)" if cand.form in RAZ_FORMS else None},
        candidate=cand.describe(),
        tolerance=tol,
        checked_points=int(slack.size),
        extra=dict(extra or {}),
    )
    # raw arrays for plotting; not serialised
    report.arrays = (res.times, np.asarray(v), np.asarray(b))
    return report


def check_estimate(model, candidate: EstimateCandidate, ensemble, tol: float = DEFAULT_TOL,
                   threads: Optional[int] = None) -> CertificationReport:
    """Evaluate the candidate's inequality at every grid time of every member.

    ``ensemble`` is an :class:`EnsembleSpec` or an already drawn
    :class:`EnsembleDraw`.
    """
    candidate.require()
    if candidate.form in RAZ_FORMS:
        return check_razumikhin(model, candidate, ensemble, tol, threads)
    draw = ensemble if isinstance(ensemble, EnsembleDraw) else draw_ensemble(model, ensemble)
    res = run_ensemble(model, draw, threads)
    ctx = build_context(model, res)
    return reduce_slack(model, candidate, ctx, res, draw.labels, tol, draw.spec.to_json())


def check_razumikhin(model, candidate: EstimateCandidate, ensemble, tol: float = DEFAULT_TOL,
                     threads: Optional[int] = None) -> CertificationReport:
    """Check a Razumikhin premise; the running max starts from H(xi)."""
    if model.h0 is None:
        raise NoDelayFreeOutput(f"model {model.name!r} has no delay-free output")
    if candidate.form not in RAZ_FORMS:
        raise ConfigError(f"{candidate.form} is not a Razumikhin form", "form")
    candidate.require()
    draw = ensemble if isinstance(ensemble, EnsembleDraw) else draw_ensemble(model, ensemble)
    res = run_ensemble(model, draw, threads)
    ctx = build_context(model, res)
    return reduce_slack(model, candidate, ctx, res, draw.labels, tol, draw.spec.to_json(),
                        extra={"checks": "premise only"})


# ---- derived candidates ------------------------------------------------------

def derived_from_si(candidate: EstimateCandidate, pi: ComparisonFunction) -> dict:
    """OL-GS and IOS candidates implied by an SI-IOS candidate.

    sigma = max{beta(., 0), gamma} for the max form (twice that for the sum
    form); the IOS candidate composes beta with the output bound pi.
    """
    if candidate.form not in ("SI-IOS", "SI-IOS-max"):
        raise ConfigError("derived candidates start from an SI-IOS form", "form")
    candidate.require()
    beta, gamma = candidate.beta, candidate.gamma
    factor = 1.0 if candidate.form.endswith("-max") else 2.0
    sigma = ComparisonFunction(
        lambda r: factor * np.maximum(beta.fn(r, np.zeros_like(r)), gamma.fn(r)), "N",
        f"{factor:g}*max({beta.name}(.,0),{gamma.name})",
    )
    beta_pi = KLFunction(lambda r, t: beta.fn(np.asarray(pi.fn(r), float), t), f"{beta.name}(pi(.),t)")
    suffix = "-max" if candidate.form.endswith("-max") else ""
    return {
        "OL-GS": EstimateCandidate("OL-GS", sigma=sigma, history_norm=candidate.history_norm),
        "IOS": EstimateCandidate("IOS" + suffix, beta=beta_pi, gamma=gamma),
    }


# ---- history-norm lift -------------------------------------------------------

def lift_to_history_norm(beta: KLFunction, theta: float, grid: FactorGrid | None = None) -> KLFunction:
    """beta_1(r, t) = p^{-1}(e^theta q(r) e^{-t}) from a factorization p(beta) <= q e^{-t}."""
    if not theta > 0:
        raise ConfigError("theta must be positive", "theta")
    fac = sontag_factorize(beta, grid)
    p, q, k = fac.p, fac.q, fac.k
    scale = math.exp(theta)

    def fn(r, t):
        v = scale * np.asarray(q.fn(np.asarray(r, float)), float) * np.exp(-np.asarray(t, float))
        return np.power(v, 1.0 / k)

    out = KLFunction(fn, f"lift[{beta.name},{theta:g}]")
    object.__setattr__(out, "factorization", fac)
    return out


# ---- exponential fitter ------------------------------------------------------

@dataclass(frozen=True)
class ExponentialFit:
    a: float
    b: float
    c: float

    def beta(self, safety: float = 1.0) -> KLFunction:
        a, b, c = self.a * safety, self.b, self.c
        return KLFunction(lambda r, t: a * np.power(r, b) * np.exp(-c * t), f"exp-kl:{a:.6g},{c:.6g},{b:g}")


def fit_exponential(r, tau, v, b: float = 1.0, overshoot: float = 2.0, c_max: float = 50.0) -> ExponentialFit:
    """Fit v <= a r^b e^{-c tau} over the given points.

    a(c) = max v e^{c tau} / r^b grows with c; the largest c with
    a(c) <= overshoot * a(0) is found by bisection.
    """
    r, tau, v = (np.asarray(z, float).ravel() for z in (r, tau, v))
    keep = v > 0
    r, tau, v = r[keep], tau[keep], v[keep]
    if v.size == 0:
        return ExponentialFit(1.0, b, 1.0)
    if np.any(r <= 0):
        raise ConfigError("positive values at zero initial size cannot be fitted by a KL envelope", "fit")
    logratio = np.log(v) - b * np.log(r)

    def log_a(c):
        return float(np.max(logratio + c * tau))

    base = log_a(0.0)
    limit = base + math.log(overshoot)
    if log_a(c_max) <= limit:
        return ExponentialFit(math.exp(log_a(c_max)), b, c_max)
    lo, hi = 0.0, c_max
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if log_a(mid) <= limit:
            lo = mid
        else:
            hi = mid
    return ExponentialFit(math.exp(log_a(lo)), b, lo)


def fit_candidate(model, form: str, ensemble: EnsembleSpec, gamma: ComparisonFunction,
                  rho: ComparisonFunction | None = None, history_norm: bool = False, b: float = 1.0,
                  safety: float = 1.1, threads: Optional[int] = None):
    """Fit beta for an IOS-type max form, then check it on a fresh seed.

    Returns (candidate, fit, report). Only points where |y| exceeds
    gamma(||u||) constrain beta.
    """
    if form not in ("IOS-max", "SI-IOS-max", "OLIOS-compact-max"):
        raise ConfigError("fitting supports IOS-max, SI-IOS-max and OLIOS-compact-max", "form")
    draw = draw_ensemble(model, ensemble)
    res = run_ensemble(model, draw, threads)
    ctx = build_context(model, res)
    probe = EstimateCandidate(form, gamma=gamma, rho=rho, history_norm=history_norm)
    if form == "IOS-max":
        r = ctx.xi_norm
        tau = ctx.t
    else:
        r = _out0(probe, ctx)
        tau = ctx.t / (1.0 + rho(ctx.xi_norm)) if form == "OLIOS-compact-max" else ctx.t
    r, tau = np.broadcast_arrays(r, tau)
    active = ctx.y > gamma(ctx.u_norm)
    fit = fit_exponential(r[active], tau[active], ctx.y[active], b=b)
    cand = EstimateCandidate(form, beta=fit.beta(safety), gamma=gamma, rho=rho, history_norm=history_norm)
    fresh = EnsembleSpec(**{**ensemble.__dict__, "seed": ensemble.seed + 1})
    report = check_estimate(model, cand, fresh, threads=threads)
    report.extra["fit"] = {"a": fit.a * safety, "b": fit.b, "c": fit.c, "fit_seed": ensemble.seed,
                           "safety": safety}
    return cand, fit, report


def razumikhin_soundness(model, raz: EstimateCandidate, gs: EstimateCandidate, ensemble: EnsembleSpec,
                         threads: Optional[int] = None) -> dict:
    """Premise + GS passing should yield a fitted IOS candidate that passes too."""
    r1 = check_razumikhin(model, raz, ensemble, threads=threads)
    r2 = check_estimate(model, gs, ensemble, threads=threads)
    out = {"premise": r1, "gs": r2, "ios": None}
    if r1.satisfied and r2.satisfied:
        _, _, rep = fit_candidate(model, "IOS-max", ensemble, raz.gamma, threads=threads)
        out["ios"] = rep
    return out


# ---- asymptotic gain -------------------------------------------------------------

def estimate_asymptotic_gain(model, levels, ensemble: EnsembleSpec, threads: Optional[int] = None) -> ComparisonFunction:
    """Staircase lower estimate of the output asymptotic gain.

    For each amplitude a, inputs are bang-bang with ||u|| = a and the max of
    |y| over the last 20% of the horizon is recorded.
    """
    levels = np.sort(np.asarray(levels, float))
    if levels.size == 0 or np.any(levels < 0):
        raise ConfigError("amplitude levels must be nonnegative and non-empty", "levels")
    draw = draw_ensemble(model, ensemble)
    K, B, m = draw.U.shape
    cfg = ensemble.sim_config()
    vals = []
    for j, a in enumerate(levels):
        rng = np.random.default_rng([ensemble.seed, j])
        U = random_bang_bang(rng, B, a, m, K, ensemble.switches)
        res = run_batches(model, draw.xi, U, cfg, threads=threads)
        y = res.output_norms
        n_tail = max(1, int(math.ceil(OAG_TAIL * y.shape[0])))
        vals.append(float(np.max(y[-n_tail:])) if B else 0.0)
    env = np.maximum.accumulate(np.asarray(vals))
    return table_function(levels, env, kind="staircase", class_tag="N", name="asymptotic-gain")
