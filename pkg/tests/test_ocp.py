import dataclasses

import numpy as np
import pytest

from surfocp.assembly import TimeGrid
from surfocp.errors import NonConvergenceError
from surfocp.motion import MotionSpec
from surfocp.ocp import (OcpOptions, OcpProblem, _ReducedQP, evaluate_cost, kkt_residuals, multiplier_mass,
                         solve_ocp, solve_unconstrained)
from qp_oracles import enumeration_oracle, penalty_oracle

SHEAR = {"kind": "linear_deformation", "profile": "shear_sin", "a": 0.2}
X0 = {"name": "coordinate", "axis": 0}


def tiny():
    from surfocp.mesh import build_icosphere

    return OcpProblem(build_icosphere(0), None, TimeGrid.uniform(1.0, 2), 1e-2, [1.0], 0.1, -1.0)


def tiny_moving():
    from surfocp.mesh import build_icosphere

    return OcpProblem(build_icosphere(0), MotionSpec.from_config(SHEAR, 1.0), TimeGrid.uniform(1.0, 2), 1e-2,
                      [1.0, X0], {"name": "coordinate", "axis": 2, "offset": 1.2}, -1.0)


@pytest.mark.parametrize("make", [tiny, tiny_moving])
@pytest.mark.parametrize("start", ["empty", "all"])
def test_pdas_matches_dense_oracles(make, start):
    pr = make()
    sol = solve_ocp(pr, OcpOptions(initial_active=start))
    u = sol.u.u.ravel()
    np.testing.assert_allclose(u, enumeration_oracle(pr), atol=1e-7)
    np.testing.assert_allclose(u, penalty_oracle(pr), atol=1e-7)
    assert all(sol.residuals[k] <= sol.scales[k] for k in sol.residuals)


def test_tiny_instance_values():
    sol = solve_ocp(tiny())
    np.testing.assert_allclose(sol.u.u.ravel(), [-0.2, 0.0], atol=1e-9)
    assert sol.Y.Y[0].min() == pytest.approx(0.0, abs=1e-9)
    assert multiplier_mass(sol.mu) > 0


@pytest.mark.parametrize("make", [tiny, tiny_moving])
def test_kkt_routes_agree(make):
    a = solve_ocp(make(), OcpOptions(kkt_solver="reduced"))
    b = solve_ocp(make(), OcpOptions(kkt_solver="spacetime"))
    assert a.kkt_solver == "reduced" and b.kkt_solver == "spacetime"
    np.testing.assert_allclose(a.u.u, b.u.u, atol=1e-9)


def test_toeplitz_map_equals_explicit(sphere):
    pr = OcpProblem(sphere(2), MotionSpec.from_config({"kind": "dilation", "profile": "one_plus_a_sin", "a": 0.25,
                                                       "omega": 2.0}, 0.5),
                    TimeGrid.uniform(0.5, 6), 1e-2, [1.0, X0], 1.0, -1.0)
    stat = OcpProblem(sphere(2), None, TimeGrid.uniform(0.5, 6), 1e-2, [1.0, X0], 1.0, -1.0)
    a, b = _ReducedQP(stat, "explicit"), _ReducedQP(stat, "toeplitz")
    assert _ReducedQP(stat).structure == "toeplitz"
    assert _ReducedQP(pr).structure == "explicit"
    np.testing.assert_allclose(a.H, b.H, atol=1e-13 * np.abs(a.H).max())
    np.testing.assert_allclose(a.q, b.q, atol=1e-13 * np.abs(a.q).max())
    idx = np.array([0, 5, 161, 400, 6 * 162 - 1])
    np.testing.assert_allclose(a.rows(idx), b.rows(idx), atol=1e-15)
    u = np.random.default_rng(0).normal(size=12)
    np.testing.assert_allclose(a.state(u), b.state(u), atol=1e-13)


def test_zero_cost_certificate(sphere):
    pr = OcpProblem(sphere(2), MotionSpec.from_config(SHEAR, 0.5), TimeGrid.uniform(0.5, 6), 1e-2, [1.0, X0],
                    {"name": "coordinate", "axis": 2, "offset": 2.0}, "zero_control_trajectory")
    sol = solve_ocp(pr)
    assert np.abs(sol.u.u).max() <= 1e-12
    assert evaluate_cost(pr, sol.u) <= 1e-12
    assert max(sol.residuals.values()) <= 1e-12
    assert multiplier_mass(sol.mu) <= 1e-12


def test_control_norm_decreases_with_alpha(sphere):
    norms = []
    for alpha in (1e-3, 1e-2, 1e-1, 1.0):
        pr = OcpProblem(sphere(1), None, TimeGrid.uniform(0.5, 4), alpha, [1.0, X0], 0.5, -1.0)
        norms.append(solve_ocp(pr).u.l2_norm_squared())
    assert all(b <= a * (1 + 1e-9) for a, b in zip(norms, norms[1:]))
    assert norms[0] > norms[-1]


def test_inactive_constraints_give_unconstrained_solution(sphere):
    pr = OcpProblem(sphere(2), MotionSpec.from_config(SHEAR, 0.5), TimeGrid.uniform(0.5, 5), 1e-2, [1.0, X0],
                    {"name": "coordinate", "axis": 2, "offset": 3.0}, {"name": "coordinate", "axis": 1, "offset": 2.0})
    sol = solve_ocp(pr)
    free = solve_unconstrained(pr)
    assert sol.Y.Y.min() > 0
    assert multiplier_mass(sol.mu) == 0.0
    np.testing.assert_allclose(sol.u.u, free, atol=1e-9)


def test_complementarity_structure(sphere):
    pr = OcpProblem(sphere(2), None, TimeGrid.uniform(0.5, 6), 1e-2, [1.0, X0],
                    {"name": "coordinate", "axis": 2, "offset": 1.0 + 1e-3}, -1.0)
    sol = solve_ocp(pr)
    mu = sol.mu.to_dense()
    assert np.all(mu <= 0)
    assert np.abs(np.minimum(sol.Y.Y, -mu)).max() <= 1e-9 * pr.data_scale() * max(1.0, multiplier_mass(mu))
    assert sol.Y.Y.min() >= -sol.scales["feasibility"]


def test_residuals_detect_perturbations():
    pr = tiny()
    sol = solve_ocp(pr)
    bumped = dataclasses.replace(sol, u=dataclasses.replace(sol.u, u=sol.u.u + 1e-4))
    assert kkt_residuals(pr, bumped)["stationarity"] > sol.scales["stationarity"]
    flipped = dataclasses.replace(sol, mu=-sol.mu.to_dense())
    assert kkt_residuals(pr, flipped)["sign"] == pytest.approx(np.abs(sol.mu.to_dense()).max())


def test_multiplier_mass():
    assert multiplier_mass(np.zeros((2, 3))) == 0.0
    assert multiplier_mass(np.array([[-1.0, 0.0], [-0.5, -2.0]])) == 3.5


def test_cost_examples(sphere):
    mesh = sphere(2)
    grid = TimeGrid.uniform(1.0, 4)
    area = mesh.total_area()
    pr = OcpProblem(mesh, None, grid, 1.0, [1.0], 1.0, 0.0)
    assert evaluate_cost(pr, np.zeros((4, 1))) == pytest.approx(0.5 * area, rel=1e-12)
    same = OcpProblem(mesh, None, grid, 1.0, [1.0], 1.0, "zero_control_trajectory")
    assert evaluate_cost(same, np.zeros((4, 1))) == 0.0
    u = np.random.default_rng(2).normal(size=(4, 1))
    pr2 = OcpProblem(mesh, None, grid, 2.0, [1.0], 1.0, "zero_control_trajectory")
    diff = evaluate_cost(pr2, u) - evaluate_cost(same, u)
    assert diff == pytest.approx(0.5 * float(grid.tau @ (u[:, 0] ** 2)), rel=1e-12)


def test_solution_export():
    sol = solve_ocp(tiny())
    d = sol.to_dict("full")
    assert set(d["residuals"]) == {"stationarity", "feasibility", "sign", "complementarity"}
    assert len(d["multipliers"]) == d["active_constraints"]
    assert "state" not in sol.to_dict()


def test_errors(sphere):
    mesh, grid = sphere(0), TimeGrid.uniform(1.0, 2)
    with pytest.raises(ValueError):
        OcpProblem(mesh, None, grid, 0.0, [1.0], 1.0, 0.0)
    with pytest.raises(ValueError):
        OcpProblem(mesh, None, grid, 1.0, [1.0], {"name": "coordinate", "axis": 2}, 0.0)
    with pytest.raises(ValueError):
        OcpProblem(mesh, None, grid, 1.0, [], 1.0, 0.0)
    with pytest.raises(ValueError):
        OcpProblem(mesh, None, grid, 1.0, [1.0], 1.0, "nonsense").target
    with pytest.raises(ValueError):
        OcpOptions.from_config({"tol_stationarity": 1.0})
    with pytest.raises(NonConvergenceError) as exc:
        solve_ocp(tiny(), OcpOptions(max_pdas_iters=1))
    assert exc.value.iterations == 1
