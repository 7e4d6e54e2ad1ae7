import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surfocp.adjoint import (MultiplierField, adjoint_identity_residual, duality_mismatch, reduced_gradient,
                             solve_adjoint, tracking_source)
from surfocp.assembly import TimeGrid
from surfocp.motion import MotionSpec
from surfocp.ocp import OcpProblem, evaluate_cost, gradient_check
from surfocp.state import ParabolicSystem, solve_state

BASIS = [1.0, {"name": "coordinate", "axis": 0}]
SHEAR = {"kind": "linear_deformation", "profile": "shear_sin", "a": 0.2}


def _system(level_mesh, cfg=SHEAR, grid=None):
    grid = grid or TimeGrid([0.0, 0.2, 0.5, 0.6, 1.0])
    return ParabolicSystem(level_mesh, MotionSpec.from_config(cfg, 1.0), grid, BASIS)


def _dense_spacetime(sys_):
    """Block bidiagonal matrix of the whole forward sweep, assembled densely."""
    N, J = sys_.N, sys_.J
    A = np.zeros((N * J, N * J))
    M = sys_.M.toarray()
    for n in range(N):
        A[n * J:(n + 1) * J, n * J:(n + 1) * J] = sys_.step_matrix(n).toarray()
        if n:
            A[n * J:(n + 1) * J, (n - 1) * J:n * J] = -M
    return A


def test_adjoint_vanishes_on_target(sphere):
    sys_ = _system(sphere(1))
    Y = solve_state(None, None, None, np.ones((sys_.N, 2)), 1.0, system=sys_).Y
    assert np.all(solve_adjoint(sys_, Y, Y.copy()).P == 0)


def test_adjoint_matches_dense_transpose(sphere):
    sys_ = _system(sphere(1))
    rng = np.random.default_rng(3)
    Y, yg = rng.normal(size=(2, sys_.N, sys_.J))
    mu = np.zeros((sys_.N, sys_.J))
    mu[-1, 5] = -1.0
    rhs = tracking_source(sys_, Y, yg) + mu
    oracle = np.linalg.solve(_dense_spacetime(sys_).T, rhs.ravel()).reshape(sys_.N, sys_.J)
    P = solve_adjoint(sys_, Y, yg, MultiplierField.from_dense(mu)).P
    np.testing.assert_allclose(P, oracle, atol=1e-12 * np.abs(oracle).max())


def test_point_mass_alone(sphere):
    sys_ = _system(sphere(1))
    zero = np.zeros((sys_.N, sys_.J))
    mu = MultiplierField(sys_.N, sys_.J, {(sys_.N - 1, 7): -1.0})
    P = solve_adjoint(sys_, zero, zero, mu).P
    e = np.zeros(sys_.J)
    e[7] = -1.0
    np.testing.assert_allclose(sys_.step_matrix(sys_.N - 1).T @ P[-1], e, atol=1e-13)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**20))
def test_duality(sphere, seed):
    sys_ = _system(sphere(2))
    rng = np.random.default_rng(seed)
    assert duality_mismatch(sys_, rng.normal(size=(sys_.N, 2)), rng.normal(size=(sys_.N, sys_.J))) <= 1e-10


@pytest.mark.parametrize("cfg", [{"kind": "stationary"}, {"kind": "dilation", "a": 0.25}, SHEAR])
def test_weak_identity(sphere, cfg):
    sys_ = _system(sphere(2), cfg)
    rng = np.random.default_rng(4)
    Y, yg = rng.normal(size=(2, sys_.N, sys_.J))
    mu = -np.abs(rng.normal(size=Y.shape)) * (rng.random(Y.shape) < 0.1)
    P = solve_adjoint(sys_, Y, yg, mu)
    assert adjoint_identity_residual(sys_, P, Y, yg, mu, rng.normal(size=Y.shape + (20,))) <= 1e-9
    wrong = P.P.copy()
    wrong[0, 0] += 1.0
    assert adjoint_identity_residual(sys_, wrong, Y, yg, mu, rng.normal(size=Y.shape + (20,))) > 1e-6


def test_reduced_gradient_trivial():
    loads = np.arange(6.0).reshape(3, 2)
    u = np.ones((4, 2))
    np.testing.assert_array_equal(reduced_gradient(np.zeros((4, 3)), loads, u, 0.5), 0.5 * u)
    P = np.zeros((4, 3))
    P[1, 2] = 1.0
    g = reduced_gradient(P, loads, np.zeros((4, 2)), 0.5)
    np.testing.assert_array_equal(g[1], loads[2])
    assert np.count_nonzero(g) == 2


def test_gradient_matches_finite_differences(sphere):
    pr = OcpProblem(sphere(2), MotionSpec.from_config(SHEAR, 1.0), TimeGrid.uniform(1.0, 5), 1e-2, BASIS,
                    {"name": "coordinate", "offset": 2.0}, -1.0)
    rng = np.random.default_rng(5)
    err, errs = gradient_check(pr, rng.normal(size=(5, 2)), rng.normal(size=(5, 2)))
    assert err <= 1e-6
    assert len(errs) >= 1


def test_cost_is_quadratic_along_lines(sphere):
    pr = OcpProblem(sphere(1), None, TimeGrid.uniform(1.0, 3), 1e-1, BASIS, 1.0, 0.0)
    rng = np.random.default_rng(6)
    u, d = rng.normal(size=(2, 3, 2))
    j = [evaluate_cost(pr, u + s * d) for s in (-1.0, 0.0, 1.0, 2.0)]
    assert j[3] - 3 * j[2] + 3 * j[1] - j[0] == pytest.approx(0.0, abs=1e-12 * max(map(abs, j)))


def test_multiplier_field_roundtrip():
    arr = np.zeros((3, 4))
    arr[1, 2], arr[2, 0] = -2.0, -0.5
    f = MultiplierField.from_dense(arr)
    assert len(f.entries) == 2
    np.testing.assert_array_equal(f.to_dense(), arr)
    assert f.total_variation() == 2.5
    assert f.to_list() == [[1, 2, -2.0], [2, 0, -0.5]]
    assert MultiplierField.empty(3, 4).total_variation() == 0.0
    with pytest.raises(ValueError):
        MultiplierField(3, 4, {(3, 0): 1.0}).to_dense()


def test_multiplier_shape_mismatch(sphere):
    sys_ = _system(sphere(0))
    zero = np.zeros((sys_.N, sys_.J))
    with pytest.raises(ValueError):
        solve_adjoint(sys_, zero, zero, MultiplierField.empty(sys_.N + 1, sys_.J))
    with pytest.raises(ValueError):
        solve_adjoint(sys_, zero, zero, np.zeros((sys_.N, sys_.J + 1)))
