"""dG(0)-in-time / P1-in-space solver for the pulled-back parabolic equation.

With piecewise-constant trial and test functions the space-time scheme is the
implicit recursion

    (M + tau_n (K_n + D_n + R_n)) Y^n = M Y^{n-1} + tau_n sum_i u_i^n l_i

started from the L2 projection ``Y^0`` of the initial value.  ``D_n`` and
``R_n`` are the drift and reaction matrices and ``l_i`` the control loads.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as sla

from .assembly import SurfaceAssembler, TimeGrid, control_load
from .errors import SolverFailureError
from .functions import make_function
from .mesh import ReferenceMesh
from .motion import MotionSpec

logger = logging.getLogger(__name__)

_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(5)


@dataclass
class ControlTrajectory:
    """Interval-constant controls, ``u[n - 1, i]`` is the value on ``(t_{n-1}, t_n)``."""

    u: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        self.u = np.atleast_2d(np.asarray(self.u, float))
        if self.u.shape[0] != self.grid.N:
            raise ValueError(f"control has {self.u.shape[0]} intervals, grid has {self.grid.N}")
        if not np.all(np.isfinite(self.u)):
            raise ValueError("control contains non-finite values")

    @property
    def m(self) -> int:
        return self.u.shape[1]

    @classmethod
    def zeros(cls, grid: TimeGrid, m: int) -> "ControlTrajectory":
        return cls(np.zeros((grid.N, m)), grid)

    @classmethod
    def from_function(cls, fn, grid: TimeGrid, m: int) -> "ControlTrajectory":
        """Interval means of ``fn(t) -> (m,)`` by 5-point Gauss quadrature."""
        u = np.zeros((grid.N, m))
        for n in range(grid.N):
            a, b = grid.t[n], grid.t[n + 1]
            ts = 0.5 * (b - a) * _GAUSS_X + 0.5 * (a + b)
            vals = np.array([np.broadcast_to(np.asarray(fn(s), float), (m,)) for s in ts])
            u[n] = 0.5 * _GAUSS_W @ vals
        return cls(u, grid)

    def l2_norm_squared(self) -> float:
        return float(self.grid.tau @ np.sum(self.u**2, axis=1))


@dataclass
class StateTrajectory:
    """Nodal values ``Y[n - 1]`` on interval ``n`` plus the projected initial value."""

    Y: np.ndarray
    Y0: np.ndarray
    grid: TimeGrid

    @property
    def final(self) -> np.ndarray:
        return self.Y[-1]

    def to_dict(self, mode="full"):
        if mode == "none":
            return None
        if mode == "final":
            return {"t": float(self.grid.T), "Y": self.Y[-1].tolist()}
        return {"t": self.grid.t[1:].tolist(), "Y0": self.Y0.tolist(), "Y": self.Y.tolist()}


class ParabolicSystem:
    """Discrete operators for one (mesh, motion, grid, control basis).

    Step factorizations are cached by ``(t_n, tau_n)`` (only ``tau_n`` for
    stationary motion) unless ``cache_factorizations`` is false; the cache is
    shared by forward and backward sweeps.
    """

    def __init__(self, mesh: ReferenceMesh, motion: MotionSpec | None, grid: TimeGrid, control_basis=(),
                 frames=None, delta=None, cache_factorizations=True):
        self.mesh = mesh
        self.motion = motion if motion is not None else MotionSpec(T=grid.T)
        self.grid = grid
        self.assembler = SurfaceAssembler(mesh, self.motion, frames=frames, delta=delta)
        self.M = self.assembler.mass().tocsc()
        self.control_basis = [make_function(f) for f in control_basis]
        self.loads = control_load(mesh, self.control_basis, self.M)
        self.cache_factorizations = cache_factorizations
        self._lu = {}
        self._beta_mass = {}

    @property
    def J(self) -> int:
        return self.mesh.n_nodes

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def m(self) -> int:
        return self.loads.shape[1]

    def _key(self, n):
        tau = float(self.grid.tau[n])
        if self.motion.time_invariant:
            return (None, tau)
        return (float(self.grid.t[n + 1]), tau)

    def step_lu(self, n):
        """Factorization of the step matrix of interval ``n + 1`` (0-based ``n``)."""
        key = self._key(n)
        lu = self._lu.get(key)
        if lu is None:
            lu = sla.splu(self.assembler.step_matrix(self.grid.t[n + 1], self.grid.tau[n]))
            if self.cache_factorizations:
                self._lu[key] = lu
            else:
                self.assembler.clear_cache()
        return lu

    def step_matrix(self, n):
        return self.assembler.step_matrix(self.grid.t[n + 1], self.grid.tau[n])

    def beta_mass(self, n):
        """beta(t_n)^2-weighted mass matrix for interval ``n + 1``."""
        W = self._beta_mass.get(n)
        if W is None:
            W = self.assembler.beta_mass(self.grid.t[n + 1]).tocsr()
            if self.cache_factorizations:
                self._beta_mass[n] = W
        return W

    def nodal(self, fn, t=0.0) -> np.ndarray:
        return make_function(fn)(self.mesh.nodes, t)

    def nodal_trajectory(self, fn) -> np.ndarray:
        """Nodal samples at ``t_1 .. t_N``, shape (N, J)."""
        f = make_function(fn)
        return np.stack([f(self.mesh.nodes, t) for t in self.grid.t[1:]])

    def control_source(self, u) -> np.ndarray:
        """Space-time load ``tau_n sum_i u_i^n l_i``; ``u`` is (N, m, ...), result (N, J, ...)."""
        src = np.einsum("ji,ni...->nj...", self.loads, np.asarray(u, float))
        return src * self.grid.tau.reshape((-1,) + (1,) * (src.ndim - 1))

    def forward(self, Y0, source=None) -> np.ndarray:
        """Forward sweep from ``Y0`` with space-time load ``source`` (N, J, ...)."""
        Y0 = np.asarray(Y0, float)
        out = np.empty((self.N,) + Y0.shape)
        prev = Y0
        for n in range(self.N):
            rhs = self.M @ prev
            if source is not None:
                rhs = rhs + source[n]
            y = self.step_lu(n).solve(rhs)
            if not np.all(np.isfinite(y)):
                raise SolverFailureError(f"non-finite state at step {n + 1}", step=n + 1)
            out[n] = y
            prev = y
        return out

    def backward(self, rhs) -> np.ndarray:
        """Transposed sweep ``A_n^T P^n = M P^{n+1} + rhs^n`` with ``P^{N+1} = 0``."""
        rhs = np.asarray(rhs, float)
        out = np.zeros_like(rhs)
        nxt = None
        for n in range(self.N - 1, -1, -1):
            b = rhs[n] if nxt is None else rhs[n] + self.M @ nxt
            if nxt is None and not np.any(b):
                continue
            p = self.step_lu(n).solve(b, trans="T")
            if not np.all(np.isfinite(p)):
                raise SolverFailureError(f"non-finite adjoint at step {n + 1}", step=n + 1)
            out[n] = p
            nxt = p
        return out

    def apply_form(self, Y) -> np.ndarray:
        """Space-time operator of the dG(0) bilinear form, ``(A Y)`` with rows indexed by test functions.

        ``A(Y, Phi) = sum_n Phi^n . (A Y)^n``.  ``Y`` is (N, J, ...).
        """
        Y = np.asarray(Y, float)
        out = np.empty_like(Y)
        for n in range(self.N):
            out[n] = self.step_matrix(n) @ Y[n]
            if n > 0:
                out[n] -= self.M @ Y[n - 1]
        return out


def project_initial(mesh: ReferenceMesh, y0, mass=None) -> np.ndarray:
    """L2(S_h) projection of ``y0`` with an interpolation-based load.

    The load is ``M I_h y0``, so the projection is the nodal interpolant itself;
    it is returned directly rather than through a mass solve.
    """
    return make_function(y0)(mesh.nodes, 0.0)


def _as_control(system, u):
    if u is None:
        return np.zeros((system.N, system.m))
    if isinstance(u, ControlTrajectory):
        return u.u
    return np.asarray(u, float).reshape(system.N, system.m)


def solve_state(mesh, motion, grid, u, y0, control_basis=(), system: ParabolicSystem | None = None) -> StateTrajectory:
    """Forward dG(0) sweep for control ``u`` (interval-constant) and initial value ``y0``."""
    if system is None:
        system = ParabolicSystem(mesh, motion, grid, control_basis)
    uu = _as_control(system, u)
    Y0 = project_initial(system.mesh, y0) if not isinstance(y0, np.ndarray) else np.asarray(y0, float)
    Y = system.forward(Y0, system.control_source(uu) if system.m else None)
    return StateTrajectory(Y, Y0, system.grid)


def solve_state_split(mesh, motion, grid, u, y0, control_basis=(), system=None):
    """Homogeneous part (``u = 0``) and zero-initial-value part of the state."""
    if system is None:
        system = ParabolicSystem(mesh, motion, grid, control_basis)
    hom = solve_state(None, None, None, None, y0, system=system)
    zero = np.zeros(system.J)
    part = solve_state(None, None, None, u, zero, system=system)
    return hom, part


def state_residual(system: ParabolicSystem, traj: StateTrajectory, u) -> float:
    """Relative residual of the dG(0) equations tested with every basis function."""
    uu = _as_control(system, u)
    lhs = system.apply_form(traj.Y)
    rhs = system.control_source(uu) if system.m else np.zeros_like(lhs)
    rhs[0] = rhs[0] + system.M @ traj.Y0
    scale = max(np.abs(lhs).max(), np.abs(rhs).max(), 1e-300)
    return float(np.abs(lhs - rhs).max() / scale)
