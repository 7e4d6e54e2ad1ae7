import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surfocp.assembly import TimeGrid, assemble_mass
from surfocp.errors import SolverFailureError
from surfocp.functions import make_function
from surfocp.motion import MotionSpec
from surfocp.state import (ControlTrajectory, ParabolicSystem, StateTrajectory, project_initial, solve_state,
                           solve_state_split, state_residual)

X3 = {"name": "coordinate", "axis": 2}
SHEAR = {"kind": "linear_deformation", "profile": "shear_sin", "a": 0.2}
BASIS = [1.0, {"name": "coordinate", "axis": 0}]


def test_project_initial_examples(sphere):
    mesh = sphere(2)
    np.testing.assert_array_equal(project_initial(mesh, 1.0), np.ones(mesh.n_nodes))
    np.testing.assert_array_equal(project_initial(mesh, X3), mesh.nodes[:, 2])
    sq = project_initial(mesh, lambda x: x[:, 2] ** 2)
    M = assemble_mass(mesh)
    oracle = sum(a / 3 * sq[t].sum() for t, a in zip(mesh.triangles, mesh.areas()))
    assert sq @ (M @ np.ones(mesh.n_nodes)) == pytest.approx(oracle, rel=1e-12)


def test_constants_are_preserved(sphere):
    mesh = sphere(2)
    traj = solve_state(mesh, MotionSpec(), TimeGrid.uniform(1.0, 5), None, 1.0)
    np.testing.assert_allclose(traj.Y, 1.0, atol=1e-14)


def test_stationary_decay_mode(sphere):
    errs = []
    for L in (2, 3, 4):
        mesh = sphere(L)
        grid = TimeGrid.uniform(0.5, int(np.ceil(0.5 / mesh.h**2)))
        traj = solve_state(mesh, None, grid, None, X3)
        exact = np.exp(-2 * grid.t[1:])[:, None] * mesh.nodes[:, 2]
        errs.append(np.abs(traj.Y - exact).max())
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] / errs[2] > 3.0


@pytest.mark.parametrize("cfg", [{"kind": "stationary"}, {"kind": "dilation", "a": 0.25}, SHEAR])
def test_discrete_residual_vanishes(sphere, cfg):
    mesh = sphere(2)
    grid = TimeGrid([0.0, 0.1, 0.25, 0.3, 0.6])
    sys_ = ParabolicSystem(mesh, MotionSpec.from_config(cfg, 1.0), grid, BASIS)
    u = np.random.default_rng(0).normal(size=(grid.N, 2))
    traj = solve_state(None, None, None, u, {"name": "coordinate", "offset": 2.0}, system=sys_)
    assert state_residual(sys_, traj, u) <= 1e-10
    assert np.all(np.isfinite(traj.Y))


def test_split_examples(sphere):
    mesh = sphere(2)
    grid = TimeGrid.uniform(0.5, 4)
    mot = MotionSpec.from_config(SHEAR, 0.5)
    sys_ = ParabolicSystem(mesh, mot, grid, BASIS)
    u = np.random.default_rng(1).normal(size=(4, 2))
    hom, part = solve_state_split(None, None, None, u, X3, system=sys_)
    full = solve_state(None, None, None, u, X3, system=sys_)
    np.testing.assert_allclose(hom.Y + part.Y, full.Y, atol=1e-12)
    _, zero_part = solve_state_split(None, None, None, np.zeros((4, 2)), X3, system=sys_)
    assert np.all(zero_part.Y == 0)
    zero_hom, _ = solve_state_split(None, None, None, u, 0.0, system=sys_)
    assert np.all(zero_hom.Y == 0)


@settings(max_examples=15, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2**16))
def test_linearity(sphere, a, b, seed):
    mesh = sphere(1)
    grid = TimeGrid.uniform(0.4, 3)
    sys_ = ParabolicSystem(mesh, MotionSpec.from_config({"kind": "dilation", "a": 0.25}, 0.4), grid, BASIS)
    rng = np.random.default_rng(seed)
    u1, u2 = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    y1, y2 = rng.normal(size=mesh.n_nodes), rng.normal(size=mesh.n_nodes)
    s = lambda u, y: solve_state(None, None, None, u, y, system=sys_).Y
    lhs = s(a * u1 + b * u2, a * y1 + b * y2)
    rhs = a * s(u1, y1) + b * s(u2, y2)
    assert np.abs(lhs - rhs).max() <= 1e-11 * max(1.0, np.abs(rhs).max())


def test_energy_decreases_for_stationary_motion(sphere):
    mesh = sphere(2)
    traj = solve_state(mesh, None, TimeGrid.uniform(1.0, 10), None, lambda x: np.exp(x[:, 0]) * x[:, 2])
    M = assemble_mass(mesh)
    norms = [traj.Y0 @ (M @ traj.Y0)] + [y @ (M @ y) for y in traj.Y]
    assert all(b <= a for a, b in zip(norms, norms[1:]))


@pytest.mark.parametrize("level", [2, 3, 4])
def test_homogeneous_state_stays_positive(sphere, level):
    mesh = sphere(level)
    mot = MotionSpec.from_config({"kind": "dilation", "a": 0.25}, 1.0)
    traj = solve_state(mesh, mot, TimeGrid.uniform(1.0, 8), None, {"name": "coordinate", "offset": 2.0})
    assert traj.Y.min() >= 0.5


def test_control_trajectory_interval_means():
    grid = TimeGrid([0.0, 0.3, 1.0])
    c = ControlTrajectory.from_function(lambda t: [t**3, 1.0], grid, 2)
    np.testing.assert_allclose(c.u[:, 0], [0.3**3 / 4, (1 - 0.3**4) / (4 * 0.7)], rtol=1e-14)
    np.testing.assert_allclose(c.u[:, 1], 1.0)
    assert c.l2_norm_squared() == pytest.approx(0.3 * (0.3**3 / 4) ** 2 + 0.7 * c.u[1, 0] ** 2 + 1.0)
    with pytest.raises(ValueError):
        ControlTrajectory(np.zeros((3, 1)), grid)
    with pytest.raises(ValueError):
        ControlTrajectory(np.array([[np.nan], [0.0]]), grid)


def test_trajectory_export(sphere):
    mesh = sphere(0)
    traj = solve_state(mesh, None, TimeGrid.uniform(1.0, 2), None, 1.0)
    assert traj.to_dict("none") is None
    assert traj.to_dict("final")["t"] == 1.0
    full = traj.to_dict("full")
    assert len(full["Y"]) == 2 and len(full["Y0"]) == 12
    assert isinstance(traj, StateTrajectory)


def test_non_finite_step_reported(sphere):
    mesh = sphere(0)
    sys_ = ParabolicSystem(mesh, None, TimeGrid.uniform(1.0, 2))
    with pytest.raises(SolverFailureError) as exc:
        sys_.forward(np.full(mesh.n_nodes, np.inf))
    assert exc.value.step == 1


def test_factorizations_are_shared(sphere):
    sys_ = ParabolicSystem(sphere(1), None, TimeGrid.uniform(1.0, 6))
    sys_.forward(np.ones(sys_.J))
    assert len(sys_._lu) == 1
    mov = ParabolicSystem(sphere(1), MotionSpec.from_config({"kind": "dilation"}, 1.0), TimeGrid.uniform(1.0, 6))
    mov.forward(np.ones(mov.J))
    assert len(mov._lu) == 6


def test_functions_registry():
    x = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    f = make_function({"name": "sum", "terms": [X3, {"name": "time_linear", "rate": -2.0}]})
    np.testing.assert_allclose(f(x, 0.5), [0.0, -1.0])
    g = make_function({"name": "gaussian_bump", "center": [0, 0, 2], "width": 1.0})
    assert g(x)[0] == pytest.approx(1.0)
    assert make_function(lambda x: x[:, 0])(x).tolist() == [0.0, 1.0]
    assert make_function(lambda x, t: t + x[:, 0])(x, 2.0).tolist() == [2.0, 3.0]
    assert make_function(X3).to_config() == X3
    with pytest.raises(ValueError):
        make_function({"name": "nope"})
    with pytest.raises(ValueError):
        make_function("x3")
