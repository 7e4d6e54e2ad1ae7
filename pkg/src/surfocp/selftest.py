"""Fast invariant suite with a deterministic JSON report."""

from __future__ import annotations

import numpy as np

from .adjoint import adjoint_identity_residual, duality_mismatch, solve_adjoint
from .assembly import SurfaceAssembler, TimeGrid
from .mesh import build_icosphere
from .motion import MotionSpec
from .ocp import OcpOptions, OcpProblem, evaluate_cost, gradient_check, solve_ocp
from .state import ParabolicSystem, solve_state, state_residual


def _entry(name, value, bound, passed):
    return {"name": name, "value": float(value), "bound": float(bound), "passed": bool(passed)}


def run_selftest(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    checks = []

    counts = [(build_icosphere(L).n_nodes, build_icosphere(L).n_triangles) for L in range(3)]
    ok = counts == [(12, 20), (42, 80), (162, 320)]
    checks.append(_entry("icosphere_counts", 0.0 if ok else 1.0, 0.0, ok))

    deficits = [4 * np.pi - build_icosphere(L).total_area() for L in (2, 3, 4)]
    ratios = [a / b for a, b in zip(deficits, deficits[1:])]
    checks.append(_entry("area_deficit_ratio_min", min(ratios), 3.5, min(ratios) >= 3.5))
    checks.append(_entry("area_deficit_ratio_max", max(ratios), 4.5, max(ratios) <= 4.5))

    mesh = build_icosphere(2)
    motion = MotionSpec.from_config({"kind": "linear_deformation", "profile": "shear_sin", "a": 0.2}, 1.0)
    asm = SurfaceAssembler(mesh, MotionSpec())
    M, K = asm.mass(), asm.stiffness(0.0)
    checks.append(_entry("mass_total_minus_area", abs(M.sum() - mesh.total_area()), 1e-12,
                         abs(M.sum() - mesh.total_area()) <= 1e-12))
    k1 = np.abs(K @ np.ones(mesh.n_nodes)).max()
    checks.append(_entry("stiffness_kernel", k1, 1e-12, k1 <= 1e-12))

    grid = TimeGrid.uniform(1.0, 6)
    basis = [1.0, {"name": "coordinate", "axis": 0}]
    sys_ = ParabolicSystem(mesh, motion, grid, basis)
    u = rng.normal(size=(grid.N, 2))
    traj = solve_state(None, None, None, u, {"name": "coordinate", "offset": 2.0}, system=sys_)
    r = state_residual(sys_, traj, u)
    checks.append(_entry("state_residual", r, 1e-10, r <= 1e-10))

    yg = rng.normal(size=traj.Y.shape)
    mu = -np.abs(rng.normal(size=traj.Y.shape)) * (rng.random(traj.Y.shape) < 0.05)
    P = solve_adjoint(sys_, traj.Y, yg, mu)
    r = adjoint_identity_residual(sys_, P, traj.Y, yg, mu, rng.normal(size=traj.Y.shape + (20,)))
    checks.append(_entry("adjoint_identity", r, 1e-9, r <= 1e-9))
    r = duality_mismatch(sys_, rng.normal(size=(grid.N, 2)), rng.normal(size=traj.Y.shape))
    checks.append(_entry("duality", r, 1e-10, r <= 1e-10))

    pr = OcpProblem(mesh, motion, grid, 1e-2, basis, {"name": "coordinate", "offset": 2.0}, -1.0)
    r, _ = gradient_check(pr, rng.normal(size=(grid.N, 2)), rng.normal(size=(grid.N, 2)))
    checks.append(_entry("gradient_fd", r, 1e-6, r <= 1e-6))

    tiny = OcpProblem(build_icosphere(0), None, TimeGrid.uniform(1.0, 2), 1e-2, [1.0], 0.1, -1.0)
    a = solve_ocp(tiny, OcpOptions(initial_active="empty"))
    b = solve_ocp(tiny, OcpOptions(initial_active="all"))
    worst = max(a.residuals[k] / a.scales[k] for k in a.residuals)
    checks.append(_entry("tiny_kkt_residual_ratio", worst, 1.0, worst <= 1.0))
    d = np.abs(a.u.u - b.u.u).max()
    checks.append(_entry("tiny_two_start", d, 1e-7, d <= 1e-7))

    zero = OcpProblem(mesh, None, TimeGrid.uniform(0.5, 8), 1e-2, [1.0],
                      {"name": "coordinate", "offset": 2.0}, "zero_control_trajectory")
    s = solve_ocp(zero)
    worst = max(np.abs(s.u.u).max(), evaluate_cost(zero, s.u), max(s.residuals.values()),
                s.mu.total_variation())
    checks.append(_entry("zero_cost_certificate", worst, 1e-12, worst <= 1e-12))

    hom = solve_state(mesh, MotionSpec.from_config({"kind": "dilation", "a": 0.25}, 1.0), TimeGrid.uniform(1.0, 8),
                      None, {"name": "coordinate", "offset": 2.0})
    checks.append(_entry("homogeneous_positivity", hom.Y.min(), 0.5, hom.Y.min() >= 0.5))

    return {"seed": int(seed), "checks": checks, "passed": all(c["passed"] for c in checks)}
