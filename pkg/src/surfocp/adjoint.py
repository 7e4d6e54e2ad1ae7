"""Discrete adjoint of the dG(0) scheme with nodal point-mass multipliers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .state import ParabolicSystem


@dataclass
class MultiplierField:
    """Sparse nodal multipliers ``mu[(n, j)]``; ``n`` is the 0-based interval index.

    The pairing with a space-time function ``Phi`` is ``sum Phi^n(x_j) mu^n_j``.
    """

    N: int
    J: int
    entries: dict = field(default_factory=dict)

    @classmethod
    def empty(cls, N: int, J: int) -> "MultiplierField":
        return cls(N, J, {})

    @classmethod
    def from_dense(cls, arr, drop_zeros=True) -> "MultiplierField":
        arr = np.asarray(arr, float)
        N, J = arr.shape
        idx = np.argwhere(arr != 0) if drop_zeros else np.argwhere(np.ones_like(arr, bool))
        return cls(N, J, {(int(n), int(j)): float(arr[n, j]) for n, j in idx})

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.N, self.J))
        for (n, j), v in self.entries.items():
            if not (0 <= n < self.N and 0 <= j < self.J):
                raise ValueError(f"multiplier index {(n, j)} outside {(self.N, self.J)}")
            out[n, j] = v
        return out

    def total_variation(self) -> float:
        return float(sum(abs(v) for v in self.entries.values()))

    def to_list(self):
        return [[n, j, v] for (n, j), v in sorted(self.entries.items())]


@dataclass
class AdjointTrajectory:
    P: np.ndarray  # (N, J)
    grid: object


def _mu_dense(system, mu):
    if mu is None:
        return np.zeros((system.N, system.J))
    if isinstance(mu, MultiplierField):
        if (mu.N, mu.J) != (system.N, system.J):
            raise ValueError(f"multiplier shape {(mu.N, mu.J)} does not match grid/mesh {(system.N, system.J)}")
        return mu.to_dense()
    arr = np.asarray(mu, float)
    if arr.shape != (system.N, system.J):
        raise ValueError(f"multiplier shape {arr.shape} does not match grid/mesh {(system.N, system.J)}")
    return arr


def tracking_source(system: ParabolicSystem, Y, yg) -> np.ndarray:
    """``tau_n W_beta(t_n) (Y^n - y_g^n)`` for every interval, shape (N, J)."""
    diff = np.asarray(Y, float) - np.asarray(yg, float)
    return np.stack([system.grid.tau[n] * (system.beta_mass(n) @ diff[n]) for n in range(system.N)])


def solve_adjoint(system: ParabolicSystem, Y, yg, mu=None) -> AdjointTrajectory:
    """Backward sweep for ``A(Phi, P) = tracking(Phi) + sum Phi^n(x_j) mu^n_j``.

    Point masses load the right-hand side as raw nodal unit vectors since
    ``Phi^n(x_j)`` is the nodal coefficient of a P1 function.
    """
    Y = np.asarray(getattr(Y, "Y", Y), float)
    rhs = tracking_source(system, Y, yg) + _mu_dense(system, mu)
    return AdjointTrajectory(system.backward(rhs), system.grid)


def reduced_gradient(P, control_loads, u, alpha) -> np.ndarray:
    """``alpha u^n_i + (P^n, f_i)_h`` per interval, shape (N, m)."""
    P = np.asarray(getattr(P, "P", P), float)
    u = np.asarray(getattr(u, "u", u), float)
    return alpha * u + P @ np.asarray(control_loads, float)


def adjoint_identity_residual(system: ParabolicSystem, P, Y, yg, mu, Phi) -> float:
    """Relative defect of ``A(Phi, P) - tracking(Phi) - <mu, Phi>`` for test functions ``Phi``.

    ``Phi`` is (N, J) or (N, J, k).  The bilinear form is applied to ``Phi``
    in its trial slot, independently of the backward sweep.
    """
    P = np.asarray(getattr(P, "P", P), float)
    Phi = np.asarray(Phi, float)
    if Phi.ndim == 2:
        Phi = Phi[..., None]
    lhs = np.einsum("njk,nj->k", system.apply_form(Phi), P)
    src = tracking_source(system, getattr(Y, "Y", Y), yg) + _mu_dense(system, mu)
    rhs = np.einsum("njk,nj->k", Phi, src)
    scale = max(np.abs(lhs).max(), np.abs(rhs).max(), 1e-300)
    return float(np.abs(lhs - rhs).max() / scale)


def control_to_state(system: ParabolicSystem, u) -> np.ndarray:
    """Linear part of the state map: zero initial value, control ``u`` (N, m)."""
    return system.forward(np.zeros(system.J), system.control_source(u))


def state_to_control_adjoint(system: ParabolicSystem, v) -> np.ndarray:
    """Transpose of :func:`control_to_state` for the Euclidean pairings."""
    P = system.backward(np.asarray(v, float))
    return system.grid.tau[:, None] * (P @ system.loads)


def duality_mismatch(system: ParabolicSystem, u, v) -> float:
    """Relative gap between ``<S u, v>`` and ``<u, S' v>``."""
    lhs = float(np.sum(control_to_state(system, u) * v))
    rhs = float(np.sum(np.asarray(u, float) * state_to_control_adjoint(system, v)))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
