"""Convergence studies, empirical orders and report output."""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .assembly import TimeGrid
from .errors import ConfigError, NonConvergenceError, SurfocpError
from .functions import make_function
from .mesh import MAX_LEVEL, build_icosphere
from .motion import MotionSpec
from .ocp import OcpOptions, OcpProblem, multiplier_mass, solve_ocp
from .state import ParabolicSystem, solve_state

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("level", "h", "tau", "metric", "error", "eoc")
THRESHOLD_SOURCE = "artifact"
NON_RATE_METRICS = {"multiplier_mass"}

_DRIFTING_TARGET = {"name": "sum", "terms": [
    {"name": "coordinate", "axis": 2, "scale": 0.5, "offset": 1.0},
    {"name": "time_linear", "rate": -4.0},
]}
_OCP_BASE = {
    "T": 0.5, "alpha": 1e-2, "control_basis": [1.0],
    "y0": {"name": "coordinate", "axis": 2, "scale": 0.5, "offset": 1.0},
    "y_g": _DRIFTING_TARGET,
}
STUDY_DEFAULTS = {
    "state_mms": {
        "levels": [2, 5], "T": 0.5, "motion": {"kind": "stationary"},
        "y0": {"name": "coordinate", "axis": 2},
        "thresholds": {"eoc_min": {"linf_max": 0.9}},
    },
    "state_dilation": {
        "levels": [2, 5], "T": 0.5, "motion": {"kind": "dilation", "profile": "linear", "a": 0.5},
        "y0": {"name": "coordinate", "axis": 2},
        "thresholds": {"eoc_min": {"linf_max": 0.9}},
    },
    "ocp_reference": {
        **_OCP_BASE, "levels": [1, 3], "reference_level": 5, "motion": {"kind": "stationary"},
        "thresholds": {"eoc_min": {"control_sq": 0.45}},
    },
    "ocp_multiplier": {
        **_OCP_BASE, "levels": [1, 4],
        "motion": {"kind": "dilation", "profile": "one_plus_a_sin", "a": 0.25, "omega": 2.0},
        "thresholds": {"mass_growth_max": 3.0, "mass_ratio_max": 10.0},
    },
}


def eoc(e_coarse, e_fine, h_coarse, h_fine):
    if e_coarse <= 0 or e_fine <= 0:
        return None
    return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine)


@dataclass
class RateTable:
    """Rows ``(level, h, tau, metric, error, eoc)``; EOCs are filled per metric."""

    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)

    def add(self, level, h, tau, metric, error):
        prev = [r for r in self.rows if r["metric"] == metric]
        if prev and not (level > prev[-1]["level"] and h < prev[-1]["h"]):
            raise ValueError("levels must increase and h decrease within a metric")
        rate = None
        if prev and metric not in NON_RATE_METRICS:
            rate = eoc(prev[-1]["error"], error, prev[-1]["h"], h)
        self.rows.append({"level": int(level), "h": float(h), "tau": float(tau), "metric": metric,
                          "error": float(error), "eoc": rate})

    def metric(self, name):
        return [r for r in self.rows if r["metric"] == name]

    def eocs(self, name):
        return [r["eoc"] for r in self.metric(name)[1:]]

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def to_dict(self):
        return {"metadata": self.metadata, "rows": self.rows, "checks": self.checks, "passed": self.passed,
                "threshold_source": THRESHOLD_SOURCE}

    @classmethod
    def from_dict(cls, data):
        return cls(rows=list(data.get("rows", [])), metadata=dict(data.get("metadata", {})),
                   checks=list(data.get("checks", [])))


def config_hash(cfg) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class ExperimentConfig:
    """One study: problem data, level range, time-step rule and thresholds."""

    study: str
    levels: tuple = (2, 5)
    T: float = 0.5
    motion: dict = field(default_factory=lambda: {"kind": "stationary"})
    tau_rule: dict = field(default_factory=lambda: {"C": 1.0, "p": 2.0})
    y0: object = None
    y_g: object = None
    alpha: float = 1e-2
    control_basis: list = field(default_factory=lambda: [1.0])
    reference_level: int | None = None
    thresholds: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExperimentConfig":
        cfg = copy.deepcopy(cfg)
        study = cfg.pop("study", None)
        if study not in STUDY_DEFAULTS:
            raise ConfigError(f"unknown study type {study!r}")
        merged = copy.deepcopy(STUDY_DEFAULTS[study])
        merged.update(cfg)
        merged["levels"] = tuple(int(v) for v in merged["levels"])
        unknown = set(merged) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        out = cls(study=study, **merged)
        out.validate()
        return out

    def to_dict(self):
        d = {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__}
        d["levels"] = list(self.levels)
        return d

    def validate(self):
        lo, hi = self.levels
        if not 0 <= lo <= hi <= MAX_LEVEL:
            raise ConfigError(f"level range {self.levels} outside [0, {MAX_LEVEL}]")
        if self.study == "ocp_reference":
            if self.reference_level is None or self.reference_level < hi + 2:
                raise ConfigError("reference level must be at least two above the finest study level")
            if self.reference_level > MAX_LEVEL:
                raise ConfigError(f"reference level above {MAX_LEVEL}")
        C, p = float(self.tau_rule.get("C", 1.0)), float(self.tau_rule.get("p", 2.0))
        if C <= 0 or p <= 0:
            raise ConfigError("tau rule needs C > 0 and p > 0")

    def grid_for(self, h) -> TimeGrid:
        C, p = float(self.tau_rule.get("C", 1.0)), float(self.tau_rule.get("p", 2.0))
        N = max(1, int(math.ceil(self.T / (C * h**p) - 1e-9)))
        return TimeGrid.uniform(self.T, N)

    def motion_spec(self) -> MotionSpec:
        return MotionSpec.from_config(self.motion, self.T).validate()


def _map_levels(fn, levels, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, levels))
    return [fn(L) for L in levels]


def amplitude_oracle(motion: MotionSpec, times, rtol=1e-13):
    """Amplitude ``phi(t)`` of ``y = phi(t) x_k`` with ``phi(0) = 1``.

    Solves ``phi' = -(2/r^2 + 2 r'/r) phi``; for stationary motion ``r = 1``.
    """
    times = np.asarray(times, float)
    if motion.kind == "stationary":
        return np.exp(-2.0 * times)
    if motion.kind != "dilation":
        raise ConfigError("the amplitude oracle needs a stationary or dilating sphere")

    def rhs(t, y):
        r = motion.radius(t)
        return -(2.0 / r**2 + 2.0 * motion.radius_rate(t) / r) * y

    sol = solve_ivp(rhs, (0.0, float(times.max())), [1.0], method="DOP853", t_eval=times,
                    rtol=rtol, atol=1e-15)
    if not sol.success:
        raise SurfocpError(f"ODE oracle failed: {sol.message}")
    return sol.y[0]


def _first_harmonic(cfg):
    f = make_function(cfg)
    if f.name == "coordinate" and float(f.params.get("offset", 0.0)) == 0.0:
        return f
    if f.name == "affine" and float(f.params.get("offset", 0.0)) == 0.0:
        return f
    raise ConfigError("state studies need y0 to be a linear function without offset")


def run_state_convergence(config: ExperimentConfig, threads: int = 1) -> RateTable:
    """Max-nodal and final-time L2 errors against ``phi(t) y0(x)``."""
    if config.study not in ("state_mms", "state_dilation"):
        raise ConfigError(f"not a state study: {config.study}")
    motion = config.motion_spec()
    y0 = _first_harmonic(config.y0)

    def one(L):
        mesh = build_icosphere(L)
        grid = config.grid_for(mesh.h)
        try:
            traj = solve_state(mesh, motion, grid, None, y0)
        except SurfocpError as exc:
            raise type(exc)(f"level {L}: {exc}") from exc
        phi = amplitude_oracle(motion, grid.t[1:])
        exact = phi[:, None] * y0(mesh.nodes)[None, :]
        err = traj.Y - exact
        M = ParabolicSystem(mesh, motion, grid).M
        return mesh.h, grid.tau_max, float(np.abs(err).max()), float(np.sqrt(err[-1] @ (M @ err[-1])))

    levels = list(range(config.levels[0], config.levels[1] + 1))
    results = _map_levels(one, levels, threads)
    table = RateTable(metadata=_metadata(config))
    for L, (h, tau, linf, l2) in zip(levels, results):
        table.add(L, h, tau, "linf_max", linf)
    for L, (h, tau, linf, l2) in zip(levels, results):
        table.add(L, h, tau, "l2_final", l2)
    table.checks = evaluate_thresholds(table, config.thresholds)
    return table


def _problem(config, level, motion):
    mesh = build_icosphere(level)
    grid = config.grid_for(mesh.h)
    return OcpProblem(mesh, motion, grid, config.alpha, config.control_basis, config.y0, config.y_g)


def _common_refinement(g1: TimeGrid, g2: TimeGrid):
    bp = np.union1d(g1.t, g2.t)
    bp = bp[np.concatenate([[True], np.diff(bp) > 1e-14 * max(1.0, g1.T)])]
    bp[-1] = g1.T
    mid = 0.5 * (bp[1:] + bp[:-1])
    i1 = np.clip(np.searchsorted(g1.t, mid) - 1, 0, g1.N - 1)
    i2 = np.clip(np.searchsorted(g2.t, mid) - 1, 0, g2.N - 1)
    return np.diff(bp), i1, i2


def control_error_sq(u, grid, u_ref, grid_ref) -> float:
    """``int |u - u_ref|^2 dt`` for interval-constant controls on different grids."""
    w, i, k = _common_refinement(grid, grid_ref)
    return float(w @ np.sum((np.asarray(u)[i] - np.asarray(u_ref)[k]) ** 2, axis=1))


def state_error_sq(Y, grid, M, Y_ref, grid_ref) -> float:
    """``int |Y - Y_ref|_h^2 dt`` with the reference restricted to the coarse nodes."""
    w, i, k = _common_refinement(grid, grid_ref)
    J = Y.shape[1]
    d = Y[i] - Y_ref[k][:, :J]
    return float(np.sum(w * np.einsum("kj,kj->k", d, (M @ d.T).T)))


def _solve_levels(config, levels, threads, options):
    motion = config.motion_spec()

    def one(L):
        pr = _problem(config, L, motion)
        try:
            sol = solve_ocp(pr, options)
        except NonConvergenceError as exc:
            logger.warning("level %d: PDAS failed: %s", L, exc)
            raise
        return pr, sol

    return _map_levels(one, levels, threads)


def run_ocp_convergence(config: ExperimentConfig, threads: int = 1) -> RateTable:
    """Control and state errors of coarse solutions against a fine reference solution."""
    if config.study != "ocp_reference":
        raise ConfigError(f"not an OCP reference study: {config.study}")
    options = OcpOptions.from_config(config.options)
    levels = list(range(config.levels[0], config.levels[1] + 1))
    (ref_pr, ref), = _solve_levels(config, [config.reference_level], 1, options)
    results = _solve_levels(config, levels, threads, options)
    table = RateTable(metadata=_metadata(config))
    rows = []
    for L, (pr, sol) in zip(levels, results):
        cu = control_error_sq(sol.u.u, pr.grid, ref.u.u, ref_pr.grid)
        cy = state_error_sq(sol.Y.Y, pr.grid, pr.system.M, ref.Y.Y, ref_pr.grid)
        rows.append((L, pr.mesh.h, pr.grid.tau_max, cu, cy))
    for name, col in (("control_sq", 3), ("state_sq", 4)):
        for r in rows:
            table.add(r[0], r[1], r[2], name, r[col])
    for r in rows:
        table.add(r[0], r[1], r[2], "combined_sq", r[3] + r[4])
    table.metadata["reference"] = {"level": config.reference_level, "N": ref_pr.grid.N,
                                   "iterations": ref.iterations}
    table.checks = evaluate_thresholds(table, config.thresholds)
    return table


def run_multiplier_study(config: ExperimentConfig, threads: int = 1) -> RateTable:
    """Total multiplier mass per level of a constrained family."""
    if config.study != "ocp_multiplier":
        raise ConfigError(f"not a multiplier study: {config.study}")
    options = OcpOptions.from_config(config.options)
    levels = list(range(config.levels[0], config.levels[1] + 1))
    results = _solve_levels(config, levels, threads, options)
    table = RateTable(metadata=_metadata(config))
    for L, (pr, sol) in zip(levels, results):
        table.add(L, pr.mesh.h, pr.grid.tau_max, "multiplier_mass", multiplier_mass(sol.mu))
    table.checks = evaluate_thresholds(table, config.thresholds)
    return table


def run_study(config: ExperimentConfig, threads: int = 1) -> RateTable:
    if config.study in ("state_mms", "state_dilation"):
        return run_state_convergence(config, threads)
    if config.study == "ocp_reference":
        return run_ocp_convergence(config, threads)
    return run_multiplier_study(config, threads)


def _check(name, value, threshold, passed):
    return {"name": name, "value": value, "threshold": threshold, "passed": bool(passed),
            "threshold_source": THRESHOLD_SOURCE}


def evaluate_thresholds(table: RateTable, thresholds: dict) -> list:
    """Checks for ``eoc_min`` (every consecutive EOC), ``mass_growth_max`` and ``mass_ratio_max``."""
    checks = []
    for metric, bound in sorted(thresholds.get("eoc_min", {}).items()):
        rates = table.eocs(metric)
        ok = bool(rates) and all(r is not None and r >= bound for r in rates)
        worst = min((r for r in rates if r is not None), default=None)
        checks.append(_check(f"eoc_min[{metric}]", worst, bound, ok))
    masses = [r["error"] for r in table.metric("multiplier_mass")]
    if "mass_growth_max" in thresholds:
        bound = thresholds["mass_growth_max"]
        growth = [b / a for a, b in zip(masses, masses[1:]) if a > 0]
        ok = len(growth) == len(masses) - 1 and len(masses) > 1 and max(growth) <= bound
        checks.append(_check("mass_growth_max", max(growth, default=None), bound, ok))
    if "mass_ratio_max" in thresholds:
        bound = thresholds["mass_ratio_max"]
        ratio = masses[-1] / masses[0] if len(masses) > 1 and masses[0] > 0 else None
        checks.append(_check("mass_ratio_max", ratio, bound, ratio is not None and ratio <= bound))
    return checks


def _metadata(config: ExperimentConfig):
    cfg = config.to_dict()
    return {"study": config.study, "config_hash": config_hash(cfg), "config": cfg}


def emit_report(table: RateTable, fmt: str = "csv", path=None) -> str:
    """Serialize a table as CSV (rows only) or JSON; writes ``path`` when given."""
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in table.rows:
            w.writerow([r["level"], repr(r["h"]), repr(r["tau"]), r["metric"], repr(r["error"]),
                        "" if r["eoc"] is None else repr(r["eoc"])])
        text = buf.getvalue()
    elif fmt == "json":
        text = json.dumps(table.to_dict(), indent=2, sort_keys=True) + "\n"
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        try:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            raise OSError(f"cannot write report to {path}: {exc}") from exc
    return text
