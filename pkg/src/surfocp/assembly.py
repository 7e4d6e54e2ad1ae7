"""P1 finite element matrices on flat-triangle surfaces.

Time-dependent matrices use the three-edge-midpoint rule: coefficients are
sampled at the radially lifted edge midpoints, basis functions and their
gradients at the flat midpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import CoefficientValidityError
from .mesh import ReferenceMesh, triangle_geometry
from .motion import CoefficientSample, MotionSpec, coefficients

# value of local basis function a at midpoint k (edge between local vertices k and k+1)
_MID_BASIS = np.array([
    [0.5, 0.0, 0.5],
    [0.5, 0.5, 0.0],
    [0.0, 0.5, 0.5],
])  # _MID_BASIS[a, k]

_P1_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0
_SAMPLE_CACHE = 4


@dataclass
class TimeGrid:
    """Partition ``0 = t_0 < ... < t_N = T``."""

    t: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        if self.t.ndim != 1 or len(self.t) < 2:
            raise ValueError("time grid needs at least two points")
        if self.t[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        tau = np.diff(self.t)
        h = self.t[-1] / len(tau)
        # equal steps up to rounding are snapped so step factorizations can be shared
        if np.all(np.abs(tau - h) <= 1e-12 * h):
            tau = np.full(len(tau), h)
        self._tau = tau

    @classmethod
    def uniform(cls, T: float, N: int) -> "TimeGrid":
        t = np.linspace(0.0, float(T), int(N) + 1)
        t[-1] = float(T)
        return cls(t)

    @property
    def tau(self) -> np.ndarray:
        return self._tau

    @property
    def tau_max(self) -> float:
        return float(self.tau.max())

    @property
    def N(self) -> int:
        return len(self.t) - 1

    @property
    def T(self) -> float:
        return float(self.t[-1])

    def to_dict(self):
        return {"t": self.t.tolist()}


class SurfaceAssembler:
    """Assembles mass, stiffness, drift and reaction matrices for one mesh and motion.

    Parameters
    ----------
    mesh : ReferenceMesh
    motion : MotionSpec
    frames : ndarray, optional
        (F, 3, 2) orthonormal tangent frames; defaults to the triangles' own
        frames (first edge direction, normal cross first edge).
    delta : float, optional
        Chart step for motions without closed-form coefficients.
    """

    def __init__(self, mesh: ReferenceMesh, motion: MotionSpec | None = None, frames=None, delta=None):
        self.mesh = mesh
        self.motion = motion if motion is not None else MotionSpec()
        self.delta = delta
        g = triangle_geometry(mesh.nodes, mesh.triangles)
        self.area = g["area"]
        self.grads = g["grads"]
        self.lifted = g["lifted"]
        self.frames = g["frame"] if frames is None else np.asarray(frames, float)
        # gradient components in the triangle frame, (F, 3 local vertices, 2)
        self.grads_frame = np.einsum("fad,fdi->fai", self.grads, self.frames)
        tri = mesh.triangles
        self._rows = np.repeat(tri, 3, axis=1).ravel()
        self._cols = np.tile(tri, (1, 3)).ravel()
        self._mass = None
        self._samples = {}

    @property
    def n(self) -> int:
        return self.mesh.n_nodes

    def _to_csr(self, local):
        A = sp.coo_matrix((local.ravel(), (self._rows, self._cols)), shape=(self.n, self.n))
        return A.tocsr()

    def mass(self) -> sp.csr_matrix:
        if self._mass is None:
            self._mass = self._to_csr(self.area[:, None, None] * _P1_MASS)
        return self._mass

    def coefficient_sample(self, t: float) -> CoefficientSample:
        """Coefficients at the lifted midpoints, arrays of shape (F, 3, ...)."""
        key = float(t)
        sample = self._samples.get(key)
        if sample is None:
            frames = np.broadcast_to(self.frames[:, None], self.lifted.shape + (2,))
            sample = coefficients(self.motion, self.lifted, frames, key, self.delta)
            if len(self._samples) >= _SAMPLE_CACHE:
                self._samples.pop(next(iter(self._samples)))
            self._samples[key] = sample
        return sample

    def clear_cache(self):
        self._samples.clear()

    def weighted_mass(self, weights) -> sp.csr_matrix:
        """Midpoint-rule mass matrix with weights of shape (F, 3)."""
        w = np.asarray(weights, float) * (self.area[:, None] / 3.0)
        local = np.einsum("fk,ak,bk->fab", w, _MID_BASIS, _MID_BASIS)
        return self._to_csr(local)

    def stiffness(self, t: float) -> sp.csr_matrix:
        s = self.coefficient_sample(t)
        eig = np.linalg.eigvalsh(s.a)
        if np.any(eig[..., 0] <= 0):
            raise CoefficientValidityError(f"diffusion coefficient not positive definite at t={t}")
        # (1/3)|T| sum_k G_a . a_k . G_b
        abar = s.a.sum(axis=1) * (self.area[:, None, None] / 3.0)
        local = np.einsum("fai,fij,fbj->fab", self.grads_frame, abar, self.grads_frame)
        return self._to_csr(local)

    def lower_order(self, t: float) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Drift (rows: test, columns: trial) and reaction matrices at time ``t``."""
        s = self.coefficient_sample(t)
        w = self.area[:, None] / 3.0
        # drift: (1/3)|T| sum_k (b_k . G_b) phi_a(p_k)
        bg = np.einsum("fki,fbi->fkb", s.b, self.grads_frame) * w[:, :, None]
        adv = np.einsum("fkb,ak->fab", bg, _MID_BASIS)
        reac = self.weighted_mass(s.c)
        return self._to_csr(adv), reac

    def beta_mass(self, t: float) -> sp.csr_matrix:
        """Tracking-norm matrix weighted by beta^2 (midpoint rule)."""
        return self.weighted_mass(self.coefficient_sample(t).beta ** 2)

    def step_matrix(self, t: float, tau: float) -> sp.csc_matrix:
        """``M + tau (K + drift + reaction)`` at time ``t``."""
        adv, reac = self.lower_order(t)
        A = self.mass() + tau * (self.stiffness(t) + adv + reac)
        return A.tocsc()


def assemble_mass(mesh: ReferenceMesh) -> sp.csr_matrix:
    return SurfaceAssembler(mesh).mass()


def assemble_stiffness(mesh: ReferenceMesh, motion: MotionSpec, t_n: float, frames=None) -> sp.csr_matrix:
    return SurfaceAssembler(mesh, motion, frames=frames).stiffness(t_n)


def assemble_lower_order(mesh: ReferenceMesh, motion: MotionSpec, t_n: float, frames=None):
    return SurfaceAssembler(mesh, motion, frames=frames).lower_order(t_n)


def control_load(mesh: ReferenceMesh, f_basis, mass=None) -> np.ndarray:
    """Load vectors ``(f_i, phi_j)_h`` from nodal interpolation; returns shape (J, m)."""
    M = assemble_mass(mesh) if mass is None else mass
    vals = np.column_stack([np.asarray(f(mesh.nodes), float) * np.ones(mesh.n_nodes) for f in f_basis]) \
        if len(f_basis) else np.zeros((mesh.n_nodes, 0))
    return np.asarray(M @ vals)


def dump_matrix_market(path, matrix, comment=""):
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix), comment=comment)
