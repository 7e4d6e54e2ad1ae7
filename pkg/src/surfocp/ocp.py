"""State-constrained optimal control by a primal-dual active-set (PDAS) method.

The discrete problem is

    min  1/2 sum_n tau_n |Y^n - y_g^n|^2_{W_n} + alpha/2 sum_n tau_n |u^n|^2
    s.t. dG(0) state equation,  Y^n_j >= 0 for all (n, j),

with nodal multipliers ``mu <= 0`` and Lagrangian ``J + sum mu^n_j Y^n_j``.

Every PDAS iterate solves the equality-constrained KKT system on the
current active set.  Two equivalent linear-algebra routes are offered:

* ``"spacetime"``: the sparse symmetric indefinite saddle system in
  ``(Y, u, P, mu_A)`` factorized with SuperLU;
* ``"reduced"``: the dense ``(u, mu_A)`` system built from the explicit
  control-to-state map ``S`` (one batched forward sweep).

With few controls and many nodal constraints the raw active set usually has
more rows than the control space has dimensions, which makes either KKT
matrix singular.  The active set is therefore thinned to a linearly
independent subset of constraint rows, chosen greedily by indicator value.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .adjoint import AdjointTrajectory, MultiplierField, reduced_gradient, solve_adjoint, tracking_source
from .assembly import TimeGrid
from .errors import DegenerateProblemError, NonConvergenceError, ResourceLimitError
from .functions import make_function
from .mesh import ReferenceMesh
from .motion import MotionSpec
from .state import ControlTrajectory, ParabolicSystem, StateTrajectory, project_initial, solve_state

logger = logging.getLogger(__name__)

ZERO_CONTROL_TARGET = "zero_control_trajectory"
RESIDUAL_NAMES = ("stationarity", "feasibility", "sign", "complementarity")
MAX_S_ENTRIES = 6e7
SPACETIME_AUTO_LIMIT = 3_000


class OcpProblem:
    """Data of one discrete optimal control problem.

    Parameters
    ----------
    mesh, motion, grid
        Reference mesh, surface motion and time partition.
    alpha : float
        Control cost weight, must be positive.
    control_basis : sequence
        Function configs (or callables) ``f_1 .. f_m``.
    y0
        Initial value, with strictly positive nodal values.
    y_g
        Target as a function of ``(x, t)``, an (N, J) array of nodal values
        at ``t_1 .. t_N``, or ``"zero_control_trajectory"`` to track the
        state produced by ``u = 0``.
    """

    def __init__(self, mesh: ReferenceMesh, motion: MotionSpec | None, grid: TimeGrid, alpha: float,
                 control_basis, y0, y_g, delta=None):
        if not alpha > 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        self.mesh = mesh
        self.motion = motion if motion is not None else MotionSpec(T=grid.T)
        self.grid = grid
        self.alpha = float(alpha)
        self.control_basis = [make_function(f) for f in control_basis]
        if not self.control_basis:
            raise ValueError("control basis is empty")
        self.y0 = y0
        self.y_g = y_g
        self.system = ParabolicSystem(mesh, self.motion, grid, self.control_basis, delta=delta)
        self.Y0 = project_initial(mesh, y0) if not isinstance(y0, np.ndarray) else np.asarray(y0, float)
        if self.Y0.min() <= 0:
            raise ValueError(f"initial value must be positive at every node (min {self.Y0.min():.3g})")
        self._yg = None

    @property
    def N(self):
        return self.grid.N

    @property
    def J(self):
        return self.mesh.n_nodes

    @property
    def m(self):
        return len(self.control_basis)

    @property
    def target(self) -> np.ndarray:
        """Nodal target values at ``t_1 .. t_N``, shape (N, J)."""
        if self._yg is None:
            if isinstance(self.y_g, str):
                if self.y_g != ZERO_CONTROL_TARGET:
                    raise ValueError(f"unknown target {self.y_g!r}")
                self._yg = self.system.forward(self.Y0)
            elif isinstance(self.y_g, np.ndarray):
                if self.y_g.shape != (self.N, self.J):
                    raise ValueError(f"target shape {self.y_g.shape} != {(self.N, self.J)}")
                self._yg = np.asarray(self.y_g, float)
            else:
                self._yg = self.system.nodal_trajectory(self.y_g)
        return self._yg

    def data_scale(self) -> float:
        return float(max(1.0, np.abs(self.Y0).max(), np.abs(self.target).max()))


@dataclass
class OcpOptions:
    tol_stat: float = 1e-9
    tol_feas: float = 1e-9
    tol_sign: float = 1e-9
    tol_comp: float = 1e-9
    max_pdas_iters: int = 50
    pdas_rho: float = 1.0
    initial_active: str = "empty"  # "empty" or "all"
    kkt_solver: str = "auto"  # "auto", "reduced" or "spacetime"
    rank_tol: float = 1e-8

    @classmethod
    def from_config(cls, cfg: dict | None) -> "OcpOptions":
        cfg = dict(cfg or {})
        known = {k: cfg.pop(k) for k in list(cfg) if k in cls.__dataclass_fields__}
        if cfg:
            raise ValueError(f"unknown solver options {sorted(cfg)}")
        return cls(**known)


@dataclass
class OcpSolution:
    u: ControlTrajectory
    Y: StateTrajectory
    P: AdjointTrajectory
    mu: MultiplierField
    residuals: dict
    iterations: int
    scales: dict = field(default_factory=dict)
    active_set: list = field(default_factory=list)
    restarts: int = 0
    kkt_solver: str = ""

    def to_dict(self, trajectories="none"):
        out = {
            "u": self.u.u.tolist(),
            "residuals": {k: float(v) for k, v in self.residuals.items()},
            "iterations": int(self.iterations),
            "multiplier_mass": multiplier_mass(self.mu),
            "active_constraints": len(self.mu.entries),
            "restarts": int(self.restarts),
            "kkt_solver": self.kkt_solver,
        }
        if trajectories != "none":
            out["state"] = self.Y.to_dict(trajectories)
            out["adjoint"] = self.P.P.tolist() if trajectories == "full" else self.P.P[0].tolist()
            out["multipliers"] = self.mu.to_list()
        return out


def multiplier_mass(mu) -> float:
    """Total variation ``sum |mu^n_j|``."""
    if isinstance(mu, MultiplierField):
        return mu.total_variation()
    return float(np.abs(np.asarray(mu, float)).sum())


def evaluate_cost(problem: OcpProblem, u) -> float:
    """Reduced cost ``J(u)`` with a fresh state solve."""
    traj = solve_state(None, None, None, u, problem.Y0, system=problem.system)
    uu = np.asarray(getattr(u, "u", u), float).reshape(problem.N, problem.m)
    return _cost(problem, traj.Y, uu)


def _cost(problem, Y, u):
    d = Y - problem.target
    tracking = sum(problem.grid.tau[n] * d[n] @ (problem.system.beta_mass(n) @ d[n]) for n in range(problem.N))
    return float(0.5 * tracking + 0.5 * problem.alpha * problem.grid.tau @ np.sum(u**2, axis=1))


def residual_scales(problem: OcpProblem, options: OcpOptions, mu_mass: float = 0.0) -> dict:
    s = problem.data_scale()
    return {
        "stationarity": options.tol_stat * s,
        "feasibility": options.tol_feas * s,
        "sign": options.tol_sign * s,
        "complementarity": options.tol_comp * s * max(1.0, mu_mass),
    }


def kkt_residuals(problem: OcpProblem, solution: OcpSolution) -> dict:
    """Recompute the four optimality residuals from ``u`` and ``mu`` alone.

    The state and adjoint are re-solved; nothing from the PDAS iteration is reused.
    """
    u = solution.u.u
    mu = solution.mu.to_dense() if isinstance(solution.mu, MultiplierField) else np.asarray(solution.mu, float)
    traj = solve_state(None, None, None, u, problem.Y0, system=problem.system)
    adj = solve_adjoint(problem.system, traj.Y, problem.target, mu)
    g = reduced_gradient(adj.P, problem.system.loads, u, problem.alpha)
    return {
        "stationarity": float(np.abs(g).max()),
        "feasibility": float(max(0.0, -traj.Y.min())),
        "sign": float(max(0.0, mu.max())),
        "complementarity": float(abs(np.sum(traj.Y * mu))),
    }


class _ReducedQP:
    """Dense reduced problem ``min 1/2 u'Hu + q'u  s.t.  Yhat + S u >= 0``.

    ``S`` maps the flattened control (column ``k*m + i`` is component ``i`` on
    interval ``k``) to nodal states.  It is stored explicitly unless the motion
    is time-invariant on a uniform grid; then ``S^{n,k}`` only depends on
    ``n - k`` and one impulse response ``G`` of shape (N, J, m) suffices.
    """

    def __init__(self, problem: OcpProblem, structure="auto"):
        sys_ = problem.system
        N, J, m = problem.N, problem.J, problem.m
        self.problem = problem
        self.N, self.J, self.m = N, J, m
        self.nm = N * m
        self.yhat = sys_.forward(problem.Y0)
        self.D = np.repeat(problem.grid.tau, m)
        tau = problem.grid.tau
        uniform = np.allclose(tau, tau[0], rtol=1e-12, atol=0.0)
        if structure == "auto":
            structure = "toeplitz" if (problem.motion.time_invariant and uniform) else "explicit"
        self.structure = structure
        diff = self.yhat - problem.target
        if structure == "toeplitz":
            self._build_toeplitz(diff)
        elif structure == "explicit":
            self._build_explicit(diff)
        else:
            raise ValueError(f"unknown map structure {structure!r}")
        self.H = 0.5 * (self.H + self.H.T)

    def _build_explicit(self, diff):
        sys_, N, J, m, nm = self.problem.system, self.N, self.J, self.m, self.nm
        if N * J * nm > MAX_S_ENTRIES:
            raise ResourceLimitError(
                f"control-to-state map needs {N * J * nm:.3g} entries (limit {MAX_S_ENTRIES:.3g})")
        tau = self.problem.grid.tau
        src = np.zeros((N, J, nm))
        for k in range(N):
            src[k, :, k * m:(k + 1) * m] = tau[k] * sys_.loads
        S = sys_.forward(np.zeros((J, nm)), src)
        del src
        self.S = S  # (N, J, nm)
        H = self.problem.alpha * np.diag(self.D)
        q = np.zeros(nm)
        for n in range(N):
            WS = tau[n] * (sys_.beta_mass(n) @ S[n])
            H += S[n].T @ WS
            q += WS.T @ diff[n]
        self.H, self.q = H, q

    def _build_toeplitz(self, diff):
        sys_, N, J, m = self.problem.system, self.N, self.J, self.m
        tau = float(self.problem.grid.tau[0])
        src = np.zeros((N, J, m))
        src[0] = tau * sys_.loads
        G = sys_.forward(np.zeros((J, m)), src)  # response at step s to a unit control on interval 0
        self.G = G
        W = sys_.beta_mass(0)
        Gf = G.transpose(1, 0, 2).reshape(J, N * m)
        C = (Gf.T @ (W @ Gf)).reshape(N, m, N, m)  # C[s, :, e, :] = G^s' W G^e
        # H[k, l] = tau sum_{n >= max(k, l)} C[n - k, n - l]
        H = np.zeros((N, m, N, m))
        for d in range(N):
            diag = np.stack([C[s, :, s + d, :] for s in range(N - d)])  # (N - d, m, m)
            cum = np.concatenate([np.zeros((1, m, m)), np.cumsum(diag, axis=0)])
            for k in range(d, N):
                blk = tau * cum[N - k]
                H[k, :, k - d, :] = blk
                H[k - d, :, k, :] = blk.T
        self.H = H.reshape(N * m, N * m) + self.problem.alpha * np.diag(self.D)
        # q[k] = tau sum_{n >= k} G^{n-k}' W diff^n
        Tm = (Gf.T @ (W @ diff.T)).reshape(N, m, N)  # Tm[s, :, n] = G^s' W diff^n
        q = np.zeros((N, m))
        for k in range(N):
            s = np.arange(N - k)
            q[k] = tau * Tm[s, :, s + k].sum(axis=0)
        self.q = q.reshape(-1)

    def rows(self, flat_idx):
        flat_idx = np.asarray(flat_idx, int)
        if self.structure == "explicit":
            return self.S.reshape(-1, self.nm)[flat_idx]
        n, j = np.divmod(flat_idx, self.J)
        out = np.zeros((len(flat_idx), self.N, self.m))
        for r, (nn, jj) in enumerate(zip(n, j)):
            out[r, :nn + 1] = self.G[nn::-1, jj, :]
        return out.reshape(len(flat_idx), self.nm)

    def state(self, u_flat):
        if self.structure == "explicit":
            return self.yhat + self.S @ u_flat
        sys_ = self.problem.system
        return sys_.forward(self.problem.Y0, sys_.control_source(u_flat.reshape(self.N, self.m)))


def _independent_subset(rows, order, rank_tol, max_rank, chunk=256):
    """Greedy selection of linearly independent rows, scanned in ``order``.

    ``rows(idx)`` returns the constraint rows for flat indices ``idx``.
    """
    Q = np.zeros((0, max_rank))
    chosen = []
    start = 0
    while start < len(order) and len(chosen) < max_rank:
        block = order[start:start + chunk]
        C = rows(block)
        norms = np.linalg.norm(C, axis=1)
        R = C - (C @ Q.T) @ Q if len(Q) else C
        ok = np.linalg.norm(R, axis=1) > rank_tol * np.maximum(norms, 1e-300)
        hit = np.flatnonzero(ok & (norms > 0))
        if len(hit) == 0:
            start += chunk
            continue
        k = hit[0]
        r = R[k]
        for _ in range(2):  # re-orthogonalize once
            r = r - (r @ Q.T) @ Q if len(Q) else r
        Q = np.vstack([Q, r / np.linalg.norm(r)])
        chosen.append(block[k])
        start += k + 1
    return np.asarray(chosen, int)


def _solve_reduced(qp: _ReducedQP, active):
    nm = qp.H.shape[0]
    C = qp.rows(active)
    k = len(active)
    K = np.zeros((nm + k, nm + k))
    K[:nm, :nm] = qp.H
    K[:nm, nm:] = C.T
    K[nm:, :nm] = C
    rhs = np.concatenate([-qp.q, -qp.yhat.reshape(-1)[active]])
    try:
        sol = scipy.linalg.solve(K, rhs, assume_a="sym")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise DegenerateProblemError(f"reduced KKT matrix is singular: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise DegenerateProblemError("reduced KKT solve produced non-finite values")
    return sol[:nm], sol[nm:]


def spacetime_kkt_matrix(problem: OcpProblem, active):
    """Sparse saddle matrix and right-hand side in the unknowns ``(Y, u, P, mu_A)``.

    Block rows: adjoint equation, stationarity, state equation, constraints.
    """
    sys_ = problem.system
    N, J, m = problem.N, problem.J, problem.m
    tau = problem.grid.tau
    W = sp.block_diag([tau[n] * sys_.beta_mass(n) for n in range(N)], format="csr")
    diag = [sys_.step_matrix(n) for n in range(N)]
    A = sp.block_diag(diag, format="csr")
    if N > 1:
        A = A - sp.kron(sp.eye(N, N, k=-1), sys_.M, format="csr")
    R = sp.block_diag([tau[n] * sp.csr_matrix(sys_.loads) for n in range(N)], format="csr")
    D = sp.diags(np.repeat(tau, m))
    k = len(active)
    E = sp.csr_matrix((np.ones(k), (np.arange(k), np.asarray(active, int))), shape=(k, N * J))
    K = sp.bmat([
        [W, None, -A.T, E.T],
        [None, problem.alpha * D, R.T, None],
        [-A, R, None, None],
        [E, None, None, None],
    ], format="csc")
    b0 = np.zeros(N * J)
    b0[:J] = sys_.M @ problem.Y0
    rhs = np.concatenate([W @ problem.target.reshape(-1), np.zeros(N * m), -b0, np.zeros(k)])
    return K, rhs


def _solve_spacetime(problem: OcpProblem, active):
    N, J, m = problem.N, problem.J, problem.m
    K, rhs = spacetime_kkt_matrix(problem, active)
    try:
        sol = sla.splu(K).solve(rhs)
    except RuntimeError as exc:
        raise DegenerateProblemError(f"space-time KKT factorization failed: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise DegenerateProblemError("space-time KKT solve produced non-finite values")
    nY = N * J
    Y = sol[:nY].reshape(N, J)
    u = sol[nY:nY + N * m]
    P = sol[nY + N * m:2 * nY + N * m].reshape(N, J)
    return u, sol[2 * nY + N * m:], Y, P


def _pick_solver(problem, options):
    if options.kkt_solver in ("reduced", "spacetime"):
        return options.kkt_solver
    if options.kkt_solver != "auto":
        raise ValueError(f"unknown KKT solver {options.kkt_solver!r}")
    return "spacetime" if problem.N * problem.J <= SPACETIME_AUTO_LIMIT else "reduced"


def _internal_residuals(problem, u, Y, mu_dense, P):
    g = reduced_gradient(P, problem.system.loads, u.reshape(problem.N, problem.m), problem.alpha)
    return {
        "stationarity": float(np.abs(g).max()),
        "feasibility": float(max(0.0, -Y.min())),
        "sign": float(max(0.0, mu_dense.max())),
        "complementarity": float(abs(np.sum(Y * mu_dense))),
    }


def _passes(res, scales):
    return all(res[k] <= scales[k] for k in RESIDUAL_NAMES)


def solve_ocp(problem: OcpProblem, options: OcpOptions | None = None) -> OcpSolution:
    """PDAS iteration with active-set thinning and one anti-cycling restart.

    Raises
    ------
    NonConvergenceError
        If the iteration cycles twice or exceeds ``max_pdas_iters``.
    DegenerateProblemError
        If a KKT solve fails.
    """
    options = options or OcpOptions()
    if not options.pdas_rho > 0:
        raise ValueError("pdas_rho must be positive")
    solver = _pick_solver(problem, options)
    qp = _ReducedQP(problem)
    N, J, m = problem.N, problem.J, problem.m
    nm = N * m
    yhat_flat = qp.yhat.reshape(-1)
    s_data = problem.data_scale()
    act_eps = 1e-13 * s_data

    rho = options.pdas_rho
    total_iters = 0
    last_res = None
    for attempt in range(2):
        if options.initial_active == "all":
            candidates = np.arange(N * J)
            priority = yhat_flat.copy()  # smallest homogeneous state first
        elif options.initial_active == "empty":
            candidates = np.zeros(0, int)
            priority = np.zeros(0)
        else:
            raise ValueError(f"unknown initial active set {options.initial_active!r}")
        seen = []
        while True:
            if total_iters >= options.max_pdas_iters:
                raise NonConvergenceError(
                    f"PDAS did not converge in {options.max_pdas_iters} iterations", last_res, total_iters)
            total_iters += 1
            order = candidates[np.argsort(priority, kind="stable")]
            active = np.sort(_independent_subset(qp.rows, order, options.rank_tol, nm))
            if solver == "reduced":
                u, mu_a = _solve_reduced(qp, active)
                Y = qp.state(u)
            else:
                u, mu_a, Y, _ = _solve_spacetime(problem, active)
            mu = np.zeros(N * J)
            mu[active] = mu_a
            mu = mu.reshape(N, J)
            P = solve_adjoint(problem.system, Y, problem.target, mu).P
            last_res = _internal_residuals(problem, u, Y, mu, P)
            scales = residual_scales(problem, options, float(np.abs(mu).sum()))
            logger.debug("PDAS it %d: |A|=%d (thinned %d) res=%s", total_iters, len(candidates), len(active),
                         last_res)
            if _passes(last_res, scales):
                return _finish(problem, options, u, mu, total_iters, attempt, solver)
            key = active.tobytes()
            if key in seen:
                logger.info("PDAS active set repeated at iteration %d (rho=%g)", total_iters, rho)
                break
            seen.append(key)
            chi = (-mu - rho * Y).reshape(-1)
            candidates = np.flatnonzero(chi > act_eps)
            priority = -chi[candidates]  # largest indicator first
        rho *= 10.0
    raise NonConvergenceError("PDAS cycled after restart with increased rho", last_res, total_iters)


def _finish(problem, options, u, mu, iterations, restarts, solver):
    grid = problem.grid
    sol = OcpSolution(
        u=ControlTrajectory(u.reshape(problem.N, problem.m), grid),
        Y=None, P=None,
        mu=MultiplierField.from_dense(mu),
        residuals={}, iterations=iterations, restarts=restarts, kkt_solver=solver,
    )
    traj = solve_state(None, None, None, sol.u, problem.Y0, system=problem.system)
    sol.Y = traj
    sol.P = solve_adjoint(problem.system, traj.Y, problem.target, mu)
    sol.residuals = kkt_residuals(problem, sol)
    sol.scales = residual_scales(problem, options, multiplier_mass(sol.mu))
    sol.active_set = sorted(sol.mu.entries)
    if not _passes(sol.residuals, sol.scales):
        raise NonConvergenceError("PDAS solution failed independent certification", sol.residuals, iterations)
    return sol


def solve_unconstrained(problem: OcpProblem) -> np.ndarray:
    """Minimizer of the reduced cost without state constraints, shape (N, m)."""
    qp = _ReducedQP(problem)
    return np.linalg.solve(qp.H, -qp.q).reshape(problem.N, problem.m)


def gradient_check(problem: OcpProblem, u, du, eps=None):
    """Central differences of the reduced cost against the adjoint gradient.

    Returns ``(best_relative_error, errors_per_eps)`` over the step sweep.
    """
    u = np.asarray(getattr(u, "u", u), float).reshape(problem.N, problem.m)
    du = np.asarray(du, float).reshape(problem.N, problem.m)
    eps = np.logspace(-1, -7, 13) if eps is None else np.asarray(eps, float)
    traj = solve_state(None, None, None, u, problem.Y0, system=problem.system)
    P = solve_adjoint(problem.system, traj.Y, problem.target).P
    g = reduced_gradient(P, problem.system.loads, u, problem.alpha)
    exact = float(np.sum(problem.grid.tau[:, None] * g * du))
    errs = []
    for e in eps:
        fd = (evaluate_cost(problem, u + e * du) - evaluate_cost(problem, u - e * du)) / (2 * e)
        errs.append(abs(fd - exact) / max(abs(exact), 1e-300))
    return float(min(errs)), [float(x) for x in errs]
