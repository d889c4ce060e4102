"""Command-line front end.

Exit codes: 0 success / estimate satisfied, 1 violation found, 2 configuration
or IO error. Every subcommand accepts ``--config FILE`` (a JSON object whose
keys are the long flag names with dashes or underscores); flags given on the
command line override the file.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .errors import BlowUp, ConfigError, DelayIOSError

COMMANDS = ("simulate", "certify", "razumikhin", "redefine", "margin")

# key -> (type, default); None default means "required or optional without default"
_COMMON = {
    "model": (str, None),
    "theta": (float, None),
    "output": (str, None),
    "steps_per_delay": (int, 64),
    "out": (str, "out"),
    "plot": (bool, False),
    "plot_format": (str, "png"),
    "threads": (int, None),
}
_ENSEMBLE = {
    "ensemble_size": (int, 200),
    "radius": (float, 1.0),
    "u_radius": (float, None),
    "seed": (int, None),
    "T": (float, 10.0),
    "switches": (int, 8),
    "zero_output": (int, None),
    "component_values": (str, None),
    "tol": (float, 1e-9),
}
_FUNCS = {"beta": (str, None), "gamma": (str, None), "sigma": (str, None), "rho": (str, None),
          "kappa": (str, None), "chi": (str, None), "c": (float, 0.0)}
_SCHEMA = {
    "simulate": {**_COMMON, "xi": (str, "const:0"), "u": (str, "const:0"), "T": (float, 10.0)},
    "certify": {**_COMMON, **_ENSEMBLE, **_FUNCS, "form": (str, None), "history_norm": (bool, False)},
    "razumikhin": {**_COMMON, **_ENSEMBLE, **_FUNCS, "form": (str, "RAZ-IOS")},
    "redefine": {**_COMMON, "xi": (str, None), "beta": (str, None), "gamma": (str, None), "segments": (int, 5),
                 "levels": (int, 11), "directions": (int, 8), "restarts": (int, 2), "sweeps": (int, 2),
                 "seed": (int, 0), "t_cap": (float, 50.0), "validate": (bool, False), "ensemble_size": (int, 20),
                 "radius": (float, 1.0), "taus": (str, "0,1")},
    "margin": {**_COMMON, **_ENSEMBLE, "sigma": (str, None), "gamma": (str, None), "variant": (str, "OL-RGAOS"),
               "adversaries": (str, "random,greedy,constant"), "b": (float, 1.0), "T": (float, 10.0),
               "ensemble_size": (int, 50)},
}
_SEED_REQUIRED = ("certify", "razumikhin", "margin")
_H_FORMS = ("OL-GS", "SI-IOS", "SI-IOS-max", "OLIOS-compact", "OLIOS-compact-max")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="delayios", description="Simulate delay systems and check output-stability estimates.")
    sub = p.add_subparsers(dest="command")
    for cmd, schema in _SCHEMA.items():
        sp = sub.add_parser(cmd, argument_default=argparse.SUPPRESS)
        sp.add_argument("--config", help="JSON config file; flags override it")
        for key, (typ, _default) in schema.items():
            flag = "--" + key.replace("_", "-")
            if typ is bool:
                sp.add_argument(flag, dest=key, action="store_true")
            else:
                sp.add_argument(flag, dest=key, type=str)
    return p


def _coerce(key, typ, raw):
    if raw is None:
        return None
    if typ is bool:
        if isinstance(raw, bool):
            return raw
        if isinstance(raw, str) and raw.lower() in ("true", "1", "yes"):
            return True
        if isinstance(raw, str) and raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}", key)
    if typ is str and not isinstance(raw, str):
        return json.dumps(raw)
    try:
        return typ(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"expected {typ.__name__}, got {raw!r}", key) from None


def resolve_config(command: str, flags: dict) -> dict:
    schema = _SCHEMA[command]
    merged: dict = {}
    cfg_path = flags.pop("config", None)
    if cfg_path is not None:
        try:
            doc = json.loads(Path(cfg_path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc.strerror}", "config") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc.msg}", "config") from None
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object", "config")
        for k, v in doc.items():
            key = k.replace("-", "_")
            if key not in schema:
                raise ConfigError(f"unknown key for {command}", key)
            merged[key] = v
    merged.update(flags)
    out = {}
    for key, (typ, default) in schema.items():
        out[key] = _coerce(key, typ, merged[key]) if key in merged else default
    if command in _SEED_REQUIRED and out.get("seed") is None:
        raise ConfigError("a seed is required for ensemble subcommands", "seed")
    if out.get("model") is None:
        raise ConfigError("no model given", "model")
    if out["steps_per_delay"] < 1:
        raise ConfigError("must be >= 1", "steps_per_delay")
    if out["plot_format"] not in ("png", "svg"):
        raise ConfigError("plot format must be png or svg", "plot_format")
    return out


def _model(cfg):
    from .dde import get_model, model_from_dsl

    spec = cfg["model"]
    if spec.startswith("@"):
        try:
            spec = Path(spec[1:]).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read model file: {exc.strerror}", "model") from None
    if spec.lstrip().startswith("{"):
        model = model_from_dsl(spec)
        if cfg["theta"] is not None:
            from dataclasses import replace

            model = replace(model, theta=cfg["theta"])
        return model
    return get_model(spec, cfg["theta"], cfg["output"])


def _literal(raw, key):
    raw = raw.strip()
    if raw.startswith("{") or raw.startswith("["):
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON literal: {exc.msg}", key) from None
    return raw


def _fn(cfg, key, kl=False):
    from .funclib import parse_function, parse_kl

    if cfg.get(key) is None:
        return None
    return parse_kl(cfg[key], key) if kl else parse_function(_literal(cfg[key], key), key)


def _component_values(raw):
    if not raw:
        return {}
    out = {}
    try:
        for part in raw.split(";"):
            k, _, vals = part.partition("=")
            out[int(k)] = [float(v) for v in vals.split(",")]
    except ValueError:
        raise ConfigError(f"expected 'index=v1,v2;index=...', got {raw!r}", "component_values") from None
    return out


def _ensemble(cfg, model, form=None):
    from .certify import EnsembleSpec

    zero = cfg.get("zero_output")
    if zero is None:
        zero = 4 if (form in _H_FORMS and model.zero_output_sampler is not None) else 0
    return EnsembleSpec(
        size=cfg["ensemble_size"], radius=cfg["radius"], u_radius=cfg.get("u_radius"), seed=cfg["seed"],
        horizon=cfg["T"], steps_per_delay=cfg["steps_per_delay"], switches=cfg.get("switches", 8),
        component_values=_component_values(cfg.get("component_values")), zero_output=zero,
    )


# ---- subcommands -------------------------------------------------------------------

def _cmd_simulate(cfg, out_dir):
    from .dde import SimConfig, simulate
    from .signals import HistorySegment, InputSignal

    model = _model(cfg)
    N = cfg["steps_per_delay"]
    xi = HistorySegment.from_literal(_literal(cfg["xi"], "xi"), model.theta, N, model.n)
    u = InputSignal.from_literal(_literal(cfg["u"], "u"), model.m, cfg["T"])
    traj = simulate(model, xi, u, SimConfig(cfg["T"], N))
    csv_path = out_dir / "trajectory.csv"
    traj.to_csv(csv_path)
    if cfg["plot"]:
        from .plotting import plot_trajectory

        plot_trajectory(traj.times, traj.states, traj.outputs, out_dir / f"trajectory.{cfg['plot_format']}",
                        title=model.name, Y=traj.Y)
    result = {
        "model": model.name,
        "final_time": float(traj.times[-1]),
        "final_state": traj.states[-1].tolist(),
        "final_output": traj.outputs[-1].tolist(),
        "max_output_norm": float(np.max(traj.output_norms)),
        "csv": csv_path.name,
    }
    return result, 0


def _candidate(cfg, form, model):
    from .certify import EstimateCandidate

    return EstimateCandidate(
        form, beta=_fn(cfg, "beta", kl=True), gamma=_fn(cfg, "gamma"), sigma=_fn(cfg, "sigma"),
        rho=_fn(cfg, "rho"), kappa=_fn(cfg, "kappa"), chi=_fn(cfg, "chi"), c=cfg.get("c") or 0.0,
        history_norm=bool(cfg.get("history_norm", False)),
    )


def _cmd_certify(cfg, out_dir, raz=False):
    from .certify import check_estimate, check_razumikhin

    model = _model(cfg)
    form = cfg.get("form")
    if form is None:
        raise ConfigError("no estimate form given", "form")
    cand = _candidate(cfg, form, model)
    ens = _ensemble(cfg, model, form)
    fn = check_razumikhin if raz else check_estimate
    rep = fn(model, cand, ens, tol=cfg["tol"], threads=cfg["threads"])
    if cfg["plot"] and hasattr(rep, "arrays"):
        from .plotting import plot_envelope

        t, v, b = rep.arrays
        if v.shape[0] == t.size:
            plot_envelope(t, v, np.broadcast_to(b, v.shape), out_dir / f"{'razumikhin' if raz else 'certify'}.{cfg['plot_format']}",
                          title=f"{model.name}: {form}", witness=rep.witness.get("member"))
    return rep.to_json(), 0 if rep.satisfied else 1


def _cmd_redefine(cfg, out_dir):
    from .redef import RedefinitionSpec, SearchSpec, estimate_hbar, validate_redefinition
    from .signals import HistorySegment

    model = _model(cfg)
    beta, gamma = _fn(cfg, "beta", kl=True), _fn(cfg, "gamma")
    if beta is None or gamma is None:
        from .errors import NoCertificate

        raise NoCertificate("redefine needs --beta and --gamma from an IOS certificate")
    search = SearchSpec(segments=cfg["segments"], magnitudes=cfg["levels"], directions=cfg["directions"],
                        restarts=cfg["restarts"], sweeps=cfg["sweeps"], seed=cfg["seed"],
                        steps_per_delay=cfg["steps_per_delay"], t_cap=cfg["t_cap"])
    spec = RedefinitionSpec(beta, gamma, search)
    result = {}
    code = 0
    if cfg["xi"] is not None:
        xi = HistorySegment.from_literal(_literal(cfg["xi"], "xi"), model.theta, cfg["steps_per_delay"], model.n)
        result["estimate"] = estimate_hbar(model, xi, spec, threads=cfg["threads"]).to_json()
    if cfg["validate"]:
        from .certify import EnsembleSpec

        try:
            taus = [float(v) for v in cfg["taus"].split(",")]
        except ValueError:
            raise ConfigError(f"expected comma-separated times, got {cfg['taus']!r}", "taus") from None
        ens = EnsembleSpec(size=cfg["ensemble_size"], radius=cfg["radius"], seed=cfg["seed"],
                           steps_per_delay=cfg["steps_per_delay"])
        rep = validate_redefinition(model, spec, ens, taus=taus, threads=cfg["threads"])
        result["validation"] = rep.to_json()
        code = 1 if rep.verdict == "violated" else 0
    if not result:
        raise ConfigError("give --xi to estimate or --validate to check along trajectories", "xi")
    return result, code


def _cmd_margin(cfg, out_dir):
    from .margin import build_closed_loop, verify_robust

    model = _model(cfg)
    sigma = _fn(cfg, "sigma")
    if sigma is None:
        raise ConfigError("margin needs --sigma", "sigma")
    cl = build_closed_loop(model, sigma, _fn(cfg, "gamma"))
    ens = _ensemble(cfg, model)
    zero = cfg.get("zero_output")
    adv = [a.strip() for a in cfg["adversaries"].split(",") if a.strip()]
    rep = verify_robust(cl, cfg["variant"], ens, adversaries=adv, zero_output=20 if zero is None else zero,
                        b=cfg["b"], threads=cfg["threads"])
    result = rep.to_json()
    result["lambda_at_1"] = float(cl.lam(1.0))
    if cfg["plot"]:
        from .plotting import plot_function

        plot_function(cl.lam, out_dir / f"margin_lambda.{cfg['plot_format']}", label="lambda")
    return result, 0 if rep.satisfied else 1


def run(argv=None) -> int:
    from .report import emit_report, make_envelope

    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _parser()
    if not argv:
        parser.print_usage(sys.stderr)
        print("delayios: error: no subcommand given", file=sys.stderr)
        return 2
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    command = ns.command
    if command is None:
        print("delayios: error: no subcommand given", file=sys.stderr)
        return 2
    flags = {k: v for k, v in vars(ns).items() if k != "command"}
    try:
        cfg = resolve_config(command, flags)
        out_dir = Path(cfg["out"])
        out_dir.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        if command == "simulate":
            result, code = _cmd_simulate(cfg, out_dir)
        elif command == "certify":
            result, code = _cmd_certify(cfg, out_dir)
        elif command == "razumikhin":
            result, code = _cmd_certify(cfg, out_dir, raz=True)
        elif command == "redefine":
            result, code = _cmd_redefine(cfg, out_dir)
        else:
            result, code = _cmd_margin(cfg, out_dir)
        elapsed = time.perf_counter() - t0
        echo = {k: v for k, v in cfg.items() if k not in ("out", "threads", "plot", "plot_format")}
        env = make_envelope(command, echo, result, code)
        path = emit_report(env, out_dir / f"{command}.json", timing={"seconds": elapsed})
    except BlowUp as exc:
        print(f"delayios: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"delayios: config error [{exc.key}]: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"delayios: IO error: {exc}", file=sys.stderr)
        return 2
    except DelayIOSError as exc:
        print(f"delayios: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    verdict = result.get("verdict") if isinstance(result, dict) else None
    print(f"{command}: {'exit ' + str(code)}{' (' + verdict + ')' if verdict else ''} -> {path}")
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
