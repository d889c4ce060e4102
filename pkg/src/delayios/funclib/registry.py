"""Named comparison functions addressable from configuration strings.

Syntax is ``kind:arg1,arg2,...``. Scalar functions:

=================  ====================================  =====
name               formula                               class
=================  ====================================  =====
``zero``           0                                     N
``linear:a``       a r                                   Kinf
``power:k[,a]``    a r^k                                 Kinf
``sqrt:a``         a sqrt(r)                             Kinf
``poly:c1,c2..``   c1 r + c2 r^2 + ...                   Kinf
``log1p:a``        a ln(1 + r)                           Kinf
``rlog1p``         r + ln(1 + r)                         Kinf
``sat:a,b``        a r / (b + r)                         K
=================  ====================================  =====

KL functions:

=======================  ===============================
``exp-kl:a,b[,k]``       a r^k e^{-b t}   (k defaults 1)
``rational-kl:a[,q]``    a r / (1 + t)^q  (q defaults 1)
``zero-kl``              0
=======================  ===============================

A JSON object with ``x``/``y``/``kind`` keys loads a knot table.
"""

from __future__ import annotations

import json
from typing import Union

import numpy as np

from ..errors import ConfigError
from .core import ComparisonFunction, KLFunction, function_from_json, identity, power_map


def _floats(args: list[str], key: str) -> list[float]:
    try:
        return [float(a) for a in args if a.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"non-numeric argument in {args!r}", key) from exc


def parse_function(spec: Union[str, dict, ComparisonFunction], key: str = "function") -> ComparisonFunction:
    """Resolve a registry expression into a :class:`ComparisonFunction`."""
    if isinstance(spec, ComparisonFunction):
        return spec
    if isinstance(spec, dict):
        return function_from_json(spec)
    if not isinstance(spec, str) or not spec:
        raise ConfigError(f"expected a function expression, got {spec!r}", key)
    text = spec.strip()
    if text.startswith("{"):
        return function_from_json(json.loads(text))
    kind, _, rest = text.partition(":")
    args = _floats(rest.split(","), key) if rest else []

    if kind == "zero":
        return ComparisonFunction(lambda r: np.zeros_like(r), "N", "zero")
    if kind == "id":
        return identity()
    if kind == "linear":
        (a,) = _need(args, 1, key, text)
        _positive(a, key)
        f = power_map(1.0, a)
        return ComparisonFunction(f.fn, "Kinf", text, inverse=f.inverse)
    if kind == "power":
        if not args:
            raise ConfigError("power needs an exponent", key)
        k = args[0]
        a = args[1] if len(args) > 1 else 1.0
        _positive(k, key)
        _positive(a, key)
        f = power_map(k, a)
        return ComparisonFunction(f.fn, "Kinf", text, inverse=f.inverse)
    if kind == "sqrt":
        a = args[0] if args else 1.0
        f = power_map(0.5, a)
        return ComparisonFunction(f.fn, "Kinf", text, inverse=f.inverse)
    if kind == "poly":
        if not args or any(c < 0 for c in args) or not any(c > 0 for c in args):
            raise ConfigError("poly needs nonnegative coefficients, at least one positive", key)
        coeffs = np.array(args)
        powers = np.arange(1, coeffs.size + 1, dtype=float)

        def poly(r, _c=coeffs, _p=powers):
            r = np.asarray(r, dtype=float)
            return np.sum(_c * np.power(r[..., None], _p), axis=-1)
        return ComparisonFunction(poly, "Kinf", text)
    if kind == "log1p":
        a = args[0] if args else 1.0
        return ComparisonFunction(lambda r, _a=a: _a * np.log1p(r), "Kinf", text,
                                  inverse=lambda y, _a=a: np.expm1(np.asarray(y) / _a))
    if kind == "rlog1p":
        return ComparisonFunction(lambda r: r + np.log1p(r), "Kinf", text)
    if kind == "sat":
        a, b = _need(args, 2, key, text)
        return ComparisonFunction(lambda r, _a=a, _b=b: _a * r / (_b + r), "K", text, domain_cap=1e12)
    raise ConfigError(f"unknown function kind {kind!r}", key)


def parse_kl(spec: Union[str, KLFunction], key: str = "beta") -> KLFunction:
    """Resolve a KL registry expression."""
    if isinstance(spec, KLFunction):
        return spec
    if not isinstance(spec, str) or not spec:
        raise ConfigError(f"expected a KL expression, got {spec!r}", key)
    text = spec.strip()
    kind, _, rest = text.partition(":")
    args = _floats(rest.split(","), key) if rest else []
    if kind == "zero-kl":
        return KLFunction(lambda r, t: np.zeros_like(r), text)
    if kind == "exp-kl":
        if len(args) < 2:
            raise ConfigError("exp-kl needs a,b", key)
        a, b = args[0], args[1]
        k = args[2] if len(args) > 2 else 1.0
        _positive(a, key)
        _positive(b, key)
        return KLFunction(lambda r, t, _a=a, _b=b, _k=k: _a * np.power(r, _k) * np.exp(-_b * t), text)
    if kind == "rational-kl":
        a = args[0] if args else 1.0
        q = args[1] if len(args) > 1 else 1.0
        return KLFunction(lambda r, t, _a=a, _q=q: _a * r / np.power(1.0 + t, _q), text)
    raise ConfigError(f"unknown KL kind {kind!r}", key)


def _need(args, n, key, text):
    if len(args) != n:
        raise ConfigError(f"{text!r} needs {n} argument(s)", key)
    return args


def _positive(v, key):
    if not v > 0:
        raise ConfigError(f"argument must be positive, got {v}", key)
