"""Named analytic functions on the reference sphere, built from JSON configs.

Every function is called as ``f(x, t=0.0)`` with ``x`` of shape (n, 3) and
returns an array of shape (n,).  Spatial functions ignore ``t``.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


class SurfaceFunction:
    def __init__(self, name: str, params: dict, fn):
        self.name = name
        self.params = dict(params)
        self._fn = fn

    def __call__(self, x, t=0.0):
        x = np.atleast_2d(np.asarray(x, float))
        return np.broadcast_to(np.asarray(self._fn(x, float(t)), float), (len(x),)).copy()

    def to_config(self) -> dict:
        return {"name": self.name, **self.params}

    def __repr__(self):
        return f"SurfaceFunction({self.to_config()!r})"


def _constant(p):
    v = float(p.get("value", 0.0))
    return lambda x, t: np.full(len(x), v)


def _coordinate(p):
    axis = int(p.get("axis", 2))
    scale = float(p.get("scale", 1.0))
    offset = float(p.get("offset", 0.0))
    return lambda x, t: offset + scale * x[:, axis]


def _affine(p):
    c0 = float(p.get("offset", 0.0))
    w = np.asarray(p.get("weights", [0.0, 0.0, 0.0]), float)
    return lambda x, t: c0 + x @ w


def _positive_part_power(p):
    axis = int(p.get("axis", 2))
    sign = float(p.get("sign", 1.0))
    power = float(p.get("power", 2.0))
    return lambda x, t: np.maximum(0.0, sign * x[:, axis]) ** power


def _gaussian_bump(p):
    c = np.asarray(p.get("center", [0.0, 0.0, 1.0]), float)
    c = c / np.linalg.norm(c)
    width = float(p.get("width", 0.5))
    amp = float(p.get("amplitude", 1.0))
    return lambda x, t: amp * np.exp(-np.sum((x - c) ** 2, axis=1) / width**2)


def _decaying_mode(p):
    # amplitude * exp(-rate t) * x_axis + offset
    axis = int(p.get("axis", 2))
    amp = float(p.get("amplitude", 1.0))
    rate = float(p.get("rate", 2.0))
    offset = float(p.get("offset", 0.0))
    return lambda x, t: offset + amp * np.exp(-rate * t) * x[:, axis]


def _time_sine(p):
    # offset + amplitude * sin(omega t) * spatial(x)
    inner = make_function(p.get("spatial", {"name": "constant", "value": 1.0}))
    amp = float(p.get("amplitude", 1.0))
    omega = float(p.get("omega", 1.0))
    offset = float(p.get("offset", 0.0))
    return lambda x, t: offset + amp * np.sin(omega * t) * inner(x, t)


def _time_linear(p):
    offset = float(p.get("offset", 0.0))
    rate = float(p.get("rate", 1.0))
    return lambda x, t: np.full(len(x), offset + rate * t)


def _sum(p):
    terms = [make_function(c) for c in p.get("terms", [])]
    return lambda x, t: sum((f(x, t) for f in terms), np.zeros(len(x)))


_REGISTRY = {
    "constant": _constant,
    "coordinate": _coordinate,
    "affine": _affine,
    "positive_part_power": _positive_part_power,
    "gaussian_bump": _gaussian_bump,
    "decaying_mode": _decaying_mode,
    "time_sine": _time_sine,
    "time_linear": _time_linear,
    "sum": _sum,
}


def make_function(cfg) -> SurfaceFunction:
    """Build a function from a config entry: a number, a dict with ``name``, or a callable."""
    if isinstance(cfg, SurfaceFunction):
        return cfg
    if callable(cfg):
        return SurfaceFunction("callable", {}, lambda x, t: cfg(x) if _arity(cfg) == 1 else cfg(x, t))
    if isinstance(cfg, (int, float)):
        return SurfaceFunction("constant", {"value": float(cfg)}, _constant({"value": cfg}))
    if not isinstance(cfg, dict) or "name" not in cfg:
        raise ConfigError(f"cannot build a function from {cfg!r}")
    params = {k: v for k, v in cfg.items() if k != "name"}
    try:
        builder = _REGISTRY[cfg["name"]]
    except KeyError:
        raise ConfigError(f"unknown function name {cfg['name']!r}") from None
    return SurfaceFunction(cfg["name"], params, builder(params))


def _arity(fn) -> int:
    import inspect

    try:
        sig = inspect.signature(fn)
    except (TypeError, ValueError):
        return 2
    n = 0
    for prm in sig.parameters.values():
        if prm.kind in (prm.POSITIONAL_ONLY, prm.POSITIONAL_OR_KEYWORD) and prm.default is prm.empty:
            n += 1
    return n
