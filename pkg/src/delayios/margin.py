"""Output-feedback stability margin.

Closed loop: x' = f(x_t, d(t) * lambda(|h(x_t)|)) with d in the closed unit
ball. lambda comes from :func:`synthesize_margin` applied to a normalised
gain sigma_n = max{sigma, id, gamma}, so sigma_n(lambda(sigma_n(s))) < s/4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .certify.checks import fit_exponential
from .certify.ensemble import EnsembleSpec, draw_ensemble, random_bang_bang, run_batches
from .dde.integrator import SimConfig, Window
from .dde.models import SystemModel
from .errors import BlowUp, ConfigError
from .funclib import (
    ComparisonFunction,
    DecayTimeFamily,
    build_rfc_envelope,
    identity,
    pointwise_max,
    synthesize_margin,
)

ADVERSARIES = ("random", "greedy", "constant")
VARIANTS = ("RGAOS", "OL-RGAOS", "SI-RGAOS")


@dataclass(frozen=True, eq=False)
class ClosedLoopModel:
    base: SystemModel
    sigma: ComparisonFunction  # normalised: sigma >= id and sigma >= gamma
    lam: ComparisonFunction

    def output_norm(self, w: Window) -> np.ndarray:
        return np.linalg.norm(np.asarray(self.base.h(w), float).reshape(w.x.shape[0], -1), axis=1)

    def feedback(self, w: Window, d: np.ndarray) -> np.ndarray:
        return d * np.asarray(self.lam(self.output_norm(w)), float)[:, None]

    def as_model(self) -> SystemModel:
        """The closed loop as an ordinary model whose input is d.

        The feedback is re-evaluated at every RK stage from the stage window.
        """
        base = self.base

        def f(w, d):
            return base.f(w, self.feedback(w, d))

        return SystemModel(
            f"{base.name}+margin", base.n, base.m, base.p, base.theta, f,
            h=None if base.h0 is not None else base.h, h0=base.h0, pi=base.pi,
            zero_output_sampler=base.zero_output_sampler, params=dict(base.params),
        )


def build_closed_loop(model: SystemModel, sigma: ComparisonFunction,
                      gamma: Optional[ComparisonFunction] = None) -> ClosedLoopModel:
    parts = [sigma, identity()] + ([gamma] if gamma is not None else [])
    sigma_n = pointwise_max(*parts, name=f"max({', '.join(p.name for p in parts)})")
    sigma_n = ComparisonFunction(sigma_n.fn, "Kinf", sigma_n.name)
    lam = synthesize_margin(sigma_n)
    return ClosedLoopModel(model, sigma_n, lam)


# ---- adversaries ---------------------------------------------------------------------

def _extreme_directions(m: int) -> np.ndarray:
    eye = np.eye(m)
    return np.concatenate((eye, -eye))


def _greedy_factory(cl: ClosedLoopModel, delta: float):
    """d(t) chosen per step to maximise |y| after one Euler step."""
    base = cl.base
    cands = _extreme_directions(base.m)

    def factory(sl):
        def control(k, t, w, y):
            B = w.x.shape[0]
            best = np.full(B, -np.inf)
            pick = np.zeros((B, base.m))
            for d in cands:
                dd = np.broadcast_to(d, (B, base.m))
                xn = w.x + delta * np.asarray(base.f(w, cl.feedback(w, dd)), float)
                if base.h0 is not None:
                    score = np.linalg.norm(np.asarray(base.h0(xn), float).reshape(B, -1), axis=1)
                else:
                    score = cl.output_norm(Window(t + delta, w.theta, xn, w.delayed, w._inner_sup, w._inner_abs))
                better = score > best
                best = np.where(better, score, best)
                pick[better] = d
            return pick
        return control
    return factory


@dataclass(eq=False)
class AdversaryRun:
    name: str
    res: object  # BatchResult
    xi_index: np.ndarray  # member -> history index
    d_norm: np.ndarray


def run_adversaries(cl: ClosedLoopModel, xi: np.ndarray, cfg: SimConfig, adversaries: Sequence[str],
                    seed: int, switches: int = 8, threads: Optional[int] = None) -> list[AdversaryRun]:
    model = cl.as_model()
    K = cfg.n_steps(model.theta)
    B, m = xi.shape[1], model.m
    out = []
    for name in adversaries:
        if name == "random":
            rng = np.random.default_rng([seed, 1])
            U = random_bang_bang(rng, B, 1.0, m, K, switches)
            res = run_batches(model, xi, U, cfg, threads=threads)
            out.append(AdversaryRun(name, res, np.arange(B), np.ones(B)))
        elif name == "constant":
            dirs = _extreme_directions(m)
            idx = np.repeat(np.arange(B), len(dirs))
            U = np.broadcast_to(np.tile(dirs, (B, 1))[None], (K, B * len(dirs), m)).copy()
            res = run_batches(model, xi[:, idx], U, cfg, threads=threads)
            out.append(AdversaryRun(name, res, idx, np.ones(idx.size)))
        elif name == "greedy":
            res = run_batches(model, xi, None, cfg, control_factory=_greedy_factory(cl, cfg.step(model.theta)),
                              threads=threads)
            out.append(AdversaryRun(name, res, np.arange(B), np.ones(B)))
        elif name == "zero":
            res = run_batches(model, xi, np.zeros((K, B, m)), cfg, threads=threads)
            out.append(AdversaryRun(name, res, np.arange(B), np.zeros(B)))
        else:
            raise ConfigError(f"unknown adversary {name!r}; expected one of {', '.join(ADVERSARIES)}", "adversaries")
    return out


# ---- verification --------------------------------------------------------------------

@dataclass(eq=False)
class RobustReport:
    variant: str
    verdict: str
    beta: dict
    rates: dict
    checks: dict
    d_invariance: dict
    adversaries: list
    ensemble: dict
    witness: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    @property
    def satisfied(self) -> bool:
        return self.verdict == "satisfied-on-ensemble"

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "verdict": self.verdict,
            "beta": self.beta,
            "rates": self.rates,
            "checks": self.checks,
            "d_invariance": self.d_invariance,
            "adversaries": list(self.adversaries),
            "ensemble": self.ensemble,
            "witness": self.witness,
            "flags": self.flags,
        }


def _collect(model, runs: list[AdversaryRun]):
    t = runs[0].res.times
    ys, r, h = [], [], []
    for run in runs:
        res = run.res
        N = res.steps_per_delay
        xi = res.full[: N + 1]
        ys.append(res.output_norms)
        r.append(np.max(np.linalg.norm(xi, axis=2), axis=0))
        h.append(model.output_norm0(xi))
    return t, np.concatenate(ys, axis=1), np.concatenate(r), np.concatenate(h)


def _fit_rate(r, t, y, b=1.0, overshoot=2.0):
    R, T = np.broadcast_arrays(r[None, :], t[:, None])
    return fit_exponential(R, T, y, b=b, overshoot=overshoot)


def verify_robust(cl: ClosedLoopModel, variant: str, ensemble: EnsembleSpec,
                  adversaries: Sequence[str] = ADVERSARIES, zero_output: int = 20, tol: float = 1e-6,
                  d_tol: float = 1e-9, safety: float = 1.1, b: float = 1.0,
                  threads: Optional[int] = None) -> RobustReport:
    """Fit a decay envelope on ``ensemble.seed`` and check it on ``seed + 1``.

    Besides the variant's estimate this checks sigma(lambda(|y|)) <= |h(xi)|/2,
    the halving milestones of the fitted decay-time family, forward
    invariance of the zero-output set, and an RFC envelope of the state.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}", "variant")
    base = cl.base
    cfg = ensemble.sim_config()
    checks: dict = {}
    witness: dict = {}
    flags: dict = {}

    def draws(seed):
        spec = EnsembleSpec(**{**ensemble.__dict__, "seed": seed, "zero_output": 0, "extras": []})
        return draw_ensemble(base, spec).xi

    try:
        fit_runs = run_adversaries(cl, draws(ensemble.seed), cfg, adversaries, ensemble.seed, ensemble.switches, threads)
        chk_runs = run_adversaries(cl, draws(ensemble.seed + 1), cfg, adversaries, ensemble.seed + 1,
                                   ensemble.switches, threads)
    except BlowUp as exc:
        return RobustReport(variant, "violated", {}, {}, {"blow_up": {"t": exc.t, "member": exc.member}}, {},
                            list(adversaries), ensemble.to_json(), witness={"blow_up": str(exc)})

    si = variant == "SI-RGAOS"
    t, y, r, h = _collect(base, fit_runs)
    rates = {}
    for run in fit_runs:
        tt, yy, rr, hh = _collect(base, [run])
        # pure envelope rate: no overshoot allowed above the t = 0 ratio
        rates[run.name] = float(_fit_rate(hh if si else rr, tt, yy, b, overshoot=1.0 + 1e-9).c)
    fit = _fit_rate(h if si else r, t, y, b)
    a, b, c = fit.a * safety, fit.b, fit.c
    beta = lambda rr, tt: a * np.power(rr, b) * np.exp(-c * tt)
    beta_json = {"a": a, "b": b, "c": c, "safety": safety, "fit_seed": ensemble.seed, "check_seed": ensemble.seed + 1}

    t, y, r, h = _collect(base, chk_runs)
    arg = h if si else r
    bound = beta(arg[None, :], t[:, None])
    slack = bound - y
    checks["decay"] = _summ(slack, tol)
    if not checks["decay"]["ok"]:
        k, i = np.unravel_index(int(np.argmin(slack)), slack.shape)
        witness = {"check": "decay", "member": int(i), "t": float(t[k]), "value": float(y[k, i]), "bound": float(bound[k, i])}
    if variant == "OL-RGAOS":
        s2 = np.asarray(cl.sigma(h), float)[None, :] - y
        checks["output_lagrange"] = _summ(s2, tol)

    # sigma(lambda(|y|)) <= |h(xi)| / 2
    s33 = 0.5 * h[None, :] - np.asarray(cl.sigma(np.asarray(cl.lam(y), float)), float)
    checks["lagrange_margin"] = _summ(s33, tol)

    # halving milestones from the fitted decay-time family
    fam = DecayTimeFamily(lambda_kl(a, b, c))
    s1 = np.max(y, axis=0)
    worst_ms = math.inf
    mono = True
    for i in range(y.shape[1]):
        if s1[i] <= 0 or arg[i] <= 0:
            continue
        prev = math.inf
        for kk in range(1, 40):
            level = s1[i] / 2 ** kk
            Tk = float(fam(arg[i], level))
            idx = np.searchsorted(t, Tk, side="left")
            if idx >= t.size:
                break
            m_after = float(np.max(y[idx:, i]))
            worst_ms = min(worst_ms, level - m_after)
            mono &= m_after <= prev
            prev = m_after
    checks["milestones"] = {"ok": bool(worst_ms >= -tol and mono), "worst_slack": _f(worst_ms), "monotone": bool(mono)}

    # RFC envelope of the closed loop
    samples = []
    for run in chk_runs:
        res = run.res
        xn = res.state_norms
        xi_n = res.xi_norms()
        T_, B_ = xn.shape
        samples.append(np.stack((np.repeat(t, B_), np.tile(xi_n, T_), np.tile(run.d_norm, T_), xn.ravel()), axis=1))
    samples = np.concatenate(samples)
    env = build_rfc_envelope(samples)
    rfc_slack = env.bound(samples[:, 0], samples[:, 1], samples[:, 2]) - samples[:, 3]
    checks["rfc"] = {"ok": bool(np.min(rfc_slack) >= -tol), "worst_slack": _f(np.min(rfc_slack)), "c": env.c,
                     "samples": int(samples.shape[0])}

    # zero-output set stays invariant
    d_inv = {"tested": 0, "max_output": 0.0, "ok": True}
    if zero_output and base.zero_output_sampler is not None:
        rng = np.random.default_rng([ensemble.seed, 7])
        zx = base.zero_output_sampler(rng, zero_output, ensemble.radius, ensemble.steps_per_delay)
        for comp, values in sorted(ensemble.component_values.items()):
            vals = np.asarray(values, float)
            zx[:, :, int(comp)] = vals[np.arange(zero_output) % vals.size][None, :]
        zr = run_adversaries(cl, zx, cfg, adversaries, ensemble.seed + 7, ensemble.switches, threads)
        mx = max(float(np.max(run.res.output_norms)) for run in zr)
        d_inv = {"tested": int(zero_output), "max_output": mx, "ok": bool(mx <= d_tol), "tolerance": d_tol}

    # RK4 picks one solution even where uniqueness may fail; flag runs whose output touches zero
    touched = int(np.sum(np.any((y[1:] < 1e-12) & (h[None, :] > 0), axis=0)))
    flags["output_reaches_zero"] = touched

    ok = all(v["ok"] for v in checks.values()) and d_inv["ok"]
    return RobustReport(
        variant=variant,
        verdict="satisfied-on-ensemble" if ok else "violated",
        beta=beta_json,
        rates=rates,
        checks=checks,
        d_invariance=d_inv,
        adversaries=list(adversaries),
        ensemble=ensemble.to_json(),
        witness=witness,
        flags=flags,
    )


def lambda_kl(a, b, c):
    from .funclib import KLFunction

    return KLFunction(lambda r, t: a * np.power(r, b) * np.exp(-c * t), f"exp-kl:{a:.6g},{c:.6g},{b:g}")


def _f(v) -> float:
    v = float(v)
    return v if math.isfinite(v) else 1e308


def _summ(slack, tol) -> dict:
    w = float(np.min(slack)) if np.size(slack) else math.inf
    return {"ok": bool(w >= -tol), "worst_slack": _f(w)}
