"""Small expression language for user-defined models.

A model is a JSON object::

    {"n": 2, "m": 1, "theta": 0.5,
     "f": ["-x1 + xd2", "-x2 + u1 * tanh(norm)"],
     "h0": ["x1"]}

Names available in ``f`` and ``h``:

``x1..xn``      current state components
``xd1..xdn``    delayed components x_i(t - theta)
``wmax1..wmaxn``  max |x_i| over the delay window
``norm``        ||x_t||, the sup norm of the window
``u1..um``      input components (``f`` only)
``t``, ``theta``

``h0`` (delay-free output) may only use ``x1..xn``. Functions: abs, sqrt,
exp, log, sin, cos, tanh, max, min; operators + - * / ** and unary minus.
"""

from __future__ import annotations

import ast
import json
import re

import numpy as np

from ..errors import ConfigError
from .models import SystemModel

_FUNCS = {
    "abs": np.abs,
    "sqrt": np.sqrt,
    "exp": np.exp,
    "log": np.log,
    "sin": np.sin,
    "cos": np.cos,
    "tanh": np.tanh,
    "max": np.maximum,
    "min": np.minimum,
}
_ALLOWED = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd,
)
_VAR = re.compile(r"^(x|xd|wmax|u)([1-9][0-9]*)$")


def _compile(expr: str, key: str, n: int, m: int, delay_free: bool):
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse {expr!r}: {exc.msg}", key) from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise ConfigError(f"{type(node).__name__} not allowed in {expr!r}", key)
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigError(f"only numeric constants allowed in {expr!r}", key)
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords:
                raise ConfigError(f"unknown function call in {expr!r}", key)
        if isinstance(node, ast.Name) and not (isinstance(node.ctx, ast.Load) and node.id in _FUNCS):
            _check_name(node.id, expr, key, n, m, delay_free)
    code = compile(tree, f"<{key}>", "eval")
    return code


def _check_name(name, expr, key, n, m, delay_free):
    if name in ("norm", "t", "theta"):
        if delay_free:
            raise ConfigError(f"{name!r} not allowed in a delay-free output ({expr!r})", key)
        return
    mt = _VAR.match(name)
    if not mt:
        raise ConfigError(f"unknown name {name!r} in {expr!r}", key)
    kind, idx = mt.group(1), int(mt.group(2))
    limit = m if kind == "u" else n
    if idx > limit:
        raise ConfigError(f"{name!r} out of range in {expr!r}", key)
    if delay_free and kind != "x":
        raise ConfigError(f"{name!r} not allowed in a delay-free output ({expr!r})", key)
    if key.startswith("h") and kind == "u":
        raise ConfigError(f"outputs cannot read inputs ({expr!r})", key)


def _env_window(w, n, u=None):
    env = dict(_FUNCS)
    B = w.x.shape[0]
    for i in range(n):
        env[f"x{i + 1}"] = w.x[:, i]
        env[f"xd{i + 1}"] = w.delayed[:, i]
    env["t"] = w.t
    env["theta"] = w.theta
    if u is not None:
        for j in range(u.shape[1]):
            env[f"u{j + 1}"] = u[:, j]
    return env, B


class _LazyEnv(dict):
    """Evaluates ``norm`` / ``wmaxI`` only when referenced."""

    def __init__(self, base, window):
        super().__init__(base)
        self._w = window

    def __missing__(self, key):
        if key == "norm":
            v = self._w.sup
        elif key.startswith("wmax"):
            v = self._w.wmax[:, int(key[4:]) - 1]
        else:
            raise KeyError(key)
        self[key] = v
        return v


def _stack(vals, B):
    return np.stack([np.broadcast_to(np.asarray(v, float), (B,)) for v in vals], axis=1)


def model_from_dsl(spec, name: str = "dsl") -> SystemModel:
    """Build a :class:`SystemModel` from a DSL object or JSON text."""
    if isinstance(spec, str):
        try:
            spec = json.loads(spec)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"model DSL is not valid JSON: {exc.msg}", "model") from None
    if not isinstance(spec, dict):
        raise ConfigError("model DSL must be a JSON object", "model")
    try:
        n = int(spec["n"])
        theta = float(spec["theta"])
        f_src = list(spec["f"])
    except KeyError as exc:
        raise ConfigError(f"model DSL missing {exc.args[0]!r}", f"model.{exc.args[0]}") from None
    m = int(spec.get("m", 1))
    if len(f_src) != n:
        raise ConfigError(f"f has {len(f_src)} components, n = {n}", "model.f")
    f_code = [_compile(e, f"model.f[{i}]", n, m, False) for i, e in enumerate(f_src)]

    def f(w, u):
        base, B = _env_window(w, n, u)
        env = _LazyEnv(base, w)
        return _stack([eval(c, {"__builtins__": {}}, env) for c in f_code], B)

    h = h0 = None
    if "h0" in spec:
        h0_src = list(spec["h0"])
        h0_code = [_compile(e, f"h0[{i}]", n, m, True) for i, e in enumerate(h0_src)]
        p = len(h0_code)

        def h0(s):
            s = np.asarray(s, float)
            env = dict(_FUNCS)
            for i in range(n):
                env[f"x{i + 1}"] = s[..., i]
            vals = [np.broadcast_to(np.asarray(eval(c, {"__builtins__": {}}, env), float), s.shape[:-1]) for c in h0_code]
            return np.stack(vals, axis=-1)
    elif "h" in spec:
        h_src = list(spec["h"])
        h_code = [_compile(e, f"h[{i}]", n, m, False) for i, e in enumerate(h_src)]
        p = len(h_code)

        def h(w):
            base, B = _env_window(w, n)
            env = _LazyEnv(base, w)
            return _stack([eval(c, {"__builtins__": {}}, env) for c in h_code], B)
    else:
        raise ConfigError("model DSL needs 'h' or 'h0'", "model.h")

    pi = None
    if "pi" in spec:
        from ..funclib import parse_function

        pi = parse_function(spec["pi"], "model.pi")
    return SystemModel(name, n, m, p, theta, f, h=h, h0=h0, pi=pi, params={"dsl": spec})
