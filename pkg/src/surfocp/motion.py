"""Smooth motions of the reference sphere and the pulled-back PDE coefficients.

A motion maps the reference surface onto the moving surface at time t.  The
parabolic equation on the moving surface becomes, on the reference surface,

    dy/dt - div(a grad y) + b . grad y + c y = f

with the divergence/gradient of the reference surface.  Coefficients are
returned in an orthonormal tangent frame supplied by the caller, so that the
stationary motion gives ``a = I`` exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ChartFailureError, ConfigError, UnsupportedMotionError
from .mesh import closest_point_lift

KINDS = ("stationary", "dilation", "linear_deformation")
_R_MIN = 0.5
_DET_MIN = 0.5


def _radius_profile(profile, p):
    if profile == "one_plus_a_sin":
        a, w = float(p.get("a", 0.25)), float(p.get("omega", 1.0))
        return (lambda t: 1.0 + a * np.sin(w * t)), (lambda t: a * w * np.cos(w * t))
    if profile == "linear":
        a = float(p.get("a", 0.5))
        return (lambda t: 1.0 + a * np.asarray(t, float)), (lambda t: a + 0.0 * np.asarray(t, float))
    raise ConfigError(f"unknown dilation profile {profile!r}")


def _matrix_profile(profile, p):
    if profile == "diag_sin":
        amp = np.asarray(p.get("amplitudes", [0.0, 0.0, float(p.get("a", 0.1))]), float)
        w = float(p.get("omega", 1.0))
        return (lambda t: np.diag(1.0 + amp * np.sin(w * t))), (lambda t: np.diag(amp * w * np.cos(w * t)))
    if profile == "shear_sin":
        # A(t) = I + a sin(wt) S with a fixed trace-free symmetric S
        a, w = float(p.get("a", 0.1)), float(p.get("omega", 1.0))
        s = np.array([[0.0, 1.0, 0.5], [1.0, 0.0, 0.0], [0.5, 0.0, 0.0]])
        return (lambda t: np.eye(3) + a * np.sin(w * t) * s), (lambda t: a * w * np.cos(w * t) * s)
    raise ConfigError(f"unknown linear_deformation profile {profile!r}")


@dataclass
class MotionSpec:
    """Analytic motion ``Psi(x, t)`` with ``Psi(., 0) = id``.

    ``kind`` is one of ``stationary``, ``dilation`` (``Psi = r(t) x``) or
    ``linear_deformation`` (``Psi = A(t) x``).  ``profile`` names the analytic
    form of ``r`` or ``A``; ``params`` holds its parameters.
    """

    kind: str = "stationary"
    profile: str | None = None
    params: dict = field(default_factory=dict)
    T: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown motion kind {self.kind!r}")
        if self.kind == "dilation":
            self.profile = self.profile or "one_plus_a_sin"
            self._r, self._rdot = _radius_profile(self.profile, self.params)
        elif self.kind == "linear_deformation":
            self.profile = self.profile or "diag_sin"
            self._A, self._Adot = _matrix_profile(self.profile, self.params)

    @classmethod
    def from_config(cls, cfg: dict | None, T: float = 1.0) -> "MotionSpec":
        cfg = dict(cfg or {})
        kind = cfg.pop("kind", "stationary")
        profile = cfg.pop("profile", None)
        T = float(cfg.pop("T", T))
        return cls(kind=kind, profile=profile, params=cfg, T=T)

    def to_config(self) -> dict:
        out = {"kind": self.kind}
        if self.profile is not None:
            out["profile"] = self.profile
        out.update(self.params)
        return out

    @property
    def time_invariant(self) -> bool:
        return self.kind == "stationary"

    def radius(self, t):
        if self.kind != "dilation":
            raise UnsupportedMotionError("radius is only defined for dilations")
        return self._r(t)

    def radius_rate(self, t):
        if self.kind != "dilation":
            raise UnsupportedMotionError("radius is only defined for dilations")
        return self._rdot(t)

    def psi(self, x, t):
        x = np.asarray(x, float)
        if self.kind == "stationary":
            return x.copy()
        if self.kind == "dilation":
            return self._r(t) * x
        return x @ self._A(t).T

    def velocity(self, x, t):
        """``dPsi/dt`` at reference points ``x``."""
        x = np.asarray(x, float)
        if self.kind == "stationary":
            return np.zeros_like(x)
        if self.kind == "dilation":
            return self._rdot(t) * x
        return x @ self._Adot(t).T

    def validate(self, samples: int = 2001):
        """Check the standing assumptions on ``[0, T]``; raises ``ConfigError``."""
        ts = np.linspace(0.0, self.T, samples)
        if self.kind == "dilation":
            if abs(self._r(0.0) - 1.0) > 1e-14:
                raise ConfigError("dilation must satisfy r(0) = 1")
            if np.min(self._r(ts)) < _R_MIN:
                raise ConfigError(f"radius drops below {_R_MIN} on [0, T]")
        elif self.kind == "linear_deformation":
            if np.max(np.abs(self._A(0.0) - np.eye(3))) > 1e-14:
                raise ConfigError("linear deformation must satisfy A(0) = I")
            dets = [np.linalg.det(self._A(t)) for t in ts]
            if min(dets) < _DET_MIN:
                raise ConfigError(f"det A(t) drops below {_DET_MIN} on [0, T]")
        return self


@dataclass
class CoefficientSample:
    """Coefficients at one or many points, components in the supplied frames.

    Shapes: ``a`` (..., 2, 2), ``b`` (..., 2), ``c`` (...), ``beta`` (...).
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    beta: np.ndarray

    def max_abs_diff(self, other: "CoefficientSample") -> float:
        return float(max(np.max(np.abs(self.a - other.a)), np.max(np.abs(self.b - other.b)),
                         np.max(np.abs(self.c - other.c)), np.max(np.abs(self.beta - other.beta))))


def coefficients_analytic(motion: MotionSpec, point, frame, t: float) -> CoefficientSample:
    """Closed-form coefficients for stationary motions and dilations of the sphere."""
    point = np.asarray(point, float)
    shape = point.shape[:-1]
    eye = np.broadcast_to(np.eye(2), shape + (2, 2)).copy()
    zero2 = np.zeros(shape + (2,))
    ones = np.ones(shape)
    if motion.kind == "stationary":
        return CoefficientSample(eye, zero2, np.zeros(shape), ones)
    if motion.kind == "dilation":
        r = float(motion.radius(t))
        rdot = float(motion.radius_rate(t))
        return CoefficientSample(eye / r**2, zero2, ones * (2.0 * rdot / r), ones * r)
    raise UnsupportedMotionError(f"no closed form for kind {motion.kind!r}; use coefficients_numeric")


def default_delta(t: float) -> float:
    return 1e-4 * (1.0 + abs(t))


_OFFSETS = [(1, 0), (-1, 0), (0, 1), (0, -1),
            (2, 0), (-2, 0), (0, 2), (0, -2),
            (1, 1), (1, -1), (-1, 1), (-1, -1)]


def _metric_data(motion, chart, t, delta):
    """Metric at the chart origin and its four axis neighbours, plus first derivatives of Psi at the origin."""
    pts = {off: motion.psi(chart[off], t) for off in chart}

    def dpsi(center):
        ci, cj = center
        d1 = (pts[(ci + 1, cj)] - pts[(ci - 1, cj)]) / (2 * delta)
        d2 = (pts[(ci, cj + 1)] - pts[(ci, cj - 1)]) / (2 * delta)
        return np.stack([d1, d2], axis=-1)  # (..., 3, 2)

    metric = {}
    for center in [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)]:
        d = dpsi(center)
        metric[center] = np.einsum("...ki,...kj->...ij", d, d)
    return metric, dpsi((0, 0))


def _christoffel(g, ginv, dg):
    """Christoffel symbols ``G[k, i, j]`` from metric derivatives ``dg[l][i, j] = d_l g_ij``."""
    # t[l, i, j] = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
    d = np.stack(dg, axis=-3)  # (..., l, i, j)
    lower = 0.5 * (np.einsum("...ijl->...lij", d) + np.einsum("...jil->...lij", d) - d)
    return np.einsum("...kl,...lij->...kij", ginv, lower)


def _sym_sqrt(g):
    w, v = np.linalg.eigh(g)
    return np.einsum("...ik,...k,...jk->...ij", v, np.sqrt(w), v)


def coefficients_numeric(motion: MotionSpec, point, frame, t: float, delta: float | None = None) -> CoefficientSample:
    """Coefficients by central differences in the chart ``s -> lift(point + s1 e1 + s2 e2)``.

    Works for any motion with pointwise ``psi`` and ``velocity``.  ``point`` is
    (..., 3) and ``frame`` (..., 3, 2).  Covariant derivatives in the drift use
    the Levi-Civita connection of the reference surface.
    """
    if delta is None:
        delta = default_delta(t)
    if not 1e-6 <= delta <= 1e-2:
        raise ValueError("delta must lie in [1e-6, 1e-2]")
    point = np.asarray(point, float)
    frame = np.asarray(frame, float)
    e1, e2 = frame[..., 0], frame[..., 1]
    chart = {off: closest_point_lift(point + delta * (off[0] * e1 + off[1] * e2)) for off in _OFFSETS}
    chart[(0, 0)] = closest_point_lift(point)

    m0, _ = _metric_data(motion, chart, 0.0, delta)
    mt, dpsi_t = _metric_data(motion, chart, t, delta)

    g0 = m0[(0, 0)]
    gt = mt[(0, 0)]
    w0 = np.linalg.eigvalsh(g0)
    if np.any(w0[..., 0] <= 0) or np.any(w0[..., -1] / w0[..., 0] > 1e8):
        raise ChartFailureError("degenerate chart: metric condition number exceeds 1e8")
    g0inv = np.linalg.inv(g0)
    gtinv = np.linalg.inv(gt)

    dg0 = [(m0[(1, 0)] - m0[(-1, 0)]) / (2 * delta), (m0[(0, 1)] - m0[(0, -1)]) / (2 * delta)]
    dgt = [(mt[(1, 0)] - mt[(-1, 0)]) / (2 * delta), (mt[(0, 1)] - mt[(0, -1)]) / (2 * delta)]
    chr0 = _christoffel(g0, g0inv, dg0)
    chrt = _christoffel(gt, gtinv, dgt)

    # D = g(t)^{-1} - g(0)^{-1}; reference covariant divergence of g(t)^{-1} equals that of D
    dinv = {c: np.linalg.inv(mt[c]) - np.linalg.inv(m0[c]) for c in [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)]}
    div_d = ((dinv[(1, 0)] - dinv[(-1, 0)])[..., :, 0] + (dinv[(0, 1)] - dinv[(0, -1)])[..., :, 1]) / (2 * delta)
    d0 = dinv[(0, 0)]
    div_d = div_d + np.einsum("...kjl,...lj->...k", chr0, d0) + np.einsum("...jjl,...kl->...k", chr0, d0)
    b_coord = np.einsum("...ij,...kij->...k", gtinv, chrt - chr0) + div_d

    # tangential divergence of the velocity on the moving surface
    v = {off: motion.velocity(chart[off], t) for off in [(1, 0), (-1, 0), (0, 1), (0, -1)]}
    dv = np.stack([(v[(1, 0)] - v[(-1, 0)]) / (2 * delta), (v[(0, 1)] - v[(0, -1)]) / (2 * delta)], axis=-1)
    c = np.einsum("...ij,...ki,...kj->...", gtinv, dv, dpsi_t)

    s0 = _sym_sqrt(g0)
    a = s0 @ gtinv @ s0
    b = np.einsum("...ij,...j->...i", s0, b_coord)
    beta = (np.linalg.det(gt) / np.linalg.det(g0)) ** 0.25
    return CoefficientSample(0.5 * (a + np.swapaxes(a, -1, -2)), b, c, beta)


def coefficients(motion: MotionSpec, point, frame, t: float, delta: float | None = None) -> CoefficientSample:
    """Closed form where available, finite differences otherwise."""
    if motion.kind in ("stationary", "dilation"):
        return coefficients_analytic(motion, point, frame, t)
    return coefficients_numeric(motion, point, frame, t, delta)
