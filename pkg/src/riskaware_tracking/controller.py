"""Adaptive risk-aware target-tracking controller.

Each step solves, over next robot positions ``x`` and slacks ``delta1``
(one per target) and ``delta2``::

    minimize    w1 * D * sum(delta1) + w2 * delta2**2 / D
    subject to  ||x_i - x0_i|| <= d_m                   (motion)
                ||x_i - x_k|| >= d_n,  i < k            (separation)
                tr P_j(x) <= rho1_j + delta1_j          (tracking)
                tr O_Pi(x)^{-1} <= rho2 + delta2        (safety)
                delta1, delta2 >= 0

with ``D = max(margin, delta_floor)``. ``P_j(x)`` is the one-step posterior
covariance from the prior estimate, ``O_Pi(x)`` the immunity-weighted
observability Gramian evaluated at the prior target estimate. Both are
block-diagonal over targets, which the evaluator exploits.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .observability import DEFAULT_HORIZON, EPS_OBS, PI_FLOOR, per_target_sog_blocks
from .optimizer import NlpProblem, SolverOptions, solve
from .sensing import MAX_DECAY_EXPONENT, SensorLibrary, as_sensor_matrix
from .world import PHI_FLOOR

log = logging.getLogger(__name__)

FEAS_TOL = 1e-6
_LOG_PHI_FLOOR = float(np.log(PHI_FLOOR))


@dataclass
class ControllerConfig:
    d_m: float
    d_n: float
    rho1: np.ndarray
    rho2: float
    w1: float = 1.0
    w2: float = 100.0
    horizon: int = DEFAULT_HORIZON
    delta_floor: float = 0.05
    use_sog: bool = True
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        self.rho1 = np.atleast_1d(np.asarray(self.rho1, dtype=float))
        if self.d_m <= 0:
            raise ValueError("d_m must be > 0")
        if self.d_n < 0:
            raise ValueError("d_n must be >= 0")
        if np.any(self.rho1 <= 0) or self.rho2 <= 0:
            raise ValueError("rho1 and rho2 must be > 0")
        if self.w1 <= 0 or self.w2 <= 0:
            raise ValueError("w1 and w2 must be > 0")
        if self.delta_floor <= 0:
            raise ValueError("delta_floor must be > 0")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    def effective_margin(self, margin: float) -> float:
        return max(float(margin), self.delta_floor)


def _inv_stack(O):
    """Inverse of a stack of SPD matrices; closed form for 2x2 blocks."""
    if O.shape[-1] != 2:
        return np.linalg.inv(O)
    a, b, d = O[:, 0, 0], O[:, 0, 1], O[:, 1, 1]
    det = a * d - b * b
    out = np.empty_like(O)
    out[:, 0, 0] = d / det
    out[:, 1, 1] = a / det
    out[:, 0, 1] = out[:, 1, 0] = -b / det
    return out


def cost_k1(delta_eff: float, delta1, w1: float = 1.0) -> float:
    """Tracking-slack cost ``w1 * D * ||delta1||_1``."""
    return float(w1 * delta_eff * np.sum(delta1))


def cost_k2(delta_eff: float, delta2: float, w2: float = 1.0) -> float:
    """Safety-slack cost ``w2 * delta2**2 / D``."""
    return float(w2 * delta2 ** 2 / delta_eff)


@dataclass
class StepDecision:
    positions: np.ndarray
    delta1: np.ndarray
    delta2: float
    objective: float
    status: str
    trace_cov: np.ndarray
    trace_inv_sog: float
    residuals: np.ndarray
    observability_lost: bool = False
    degraded: bool = False
    fallback: bool = False
    multipliers: np.ndarray | None = None
    iterations: int = 0


class TrackingNlp:
    """The per-step NLP with analytic derivatives.

    Decision vector ``z = [x_1, ..., x_N, delta1_1, ..., delta1_M, delta2]``;
    ``delta2`` is absent when the safety constraint is disabled. Constraint
    order: motion (N), separation (pairs ``i < k`` in lexicographic order),
    tracking (M), safety (0 or 1).
    """

    def __init__(self, x0, prior_state, prior_cov, gamma, library: SensorLibrary, fields,
                 A_blocks, cfg: ControllerConfig, margin: float):
        self.x0 = np.atleast_2d(np.asarray(x0, dtype=float))
        self.N, self.p = self.x0.shape
        self.e = np.asarray(prior_state, dtype=float).reshape(-1, self.p)
        self.M = self.e.shape[0]
        if self.M < 1:
            raise ValueError("need at least one target")
        if cfg.rho1.size != self.M:
            raise ValueError(f"rho1 has {cfg.rho1.size} entries for {self.M} targets")
        self.cfg = cfg
        self.gamma = as_sensor_matrix(gamma, library.n_types)
        self.delta_eff = cfg.effective_margin(margin)
        self.use_sog = cfg.use_sog
        P = np.asarray(prior_cov, dtype=float)
        p = self.p
        self.P = np.stack([P[j * p:(j + 1) * p, j * p:(j + 1) * p] for j in range(self.M)])
        self.trace_prior = np.trace(self.P, axis1=1, axis2=2)

        # tracking rows: identical sensor structure for every target
        robots, types = np.nonzero(self.gamma)
        self.row_robot = robots
        self.assign = (robots[None, :] == np.arange(self.x0.shape[0])[:, None]).astype(float)  # (N, rows)
        self.H = library.rows[types]
        self.row_w = library.weights[types]
        self.row_lam = library.decay[types]
        self.HP = np.einsum("rk,jkl->jrl", self.H, self.P)
        self.HPHt = np.einsum("jrl,sl->jrs", self.HP, self.H)
        self._eye_rows = np.eye(robots.size)

        self.sigmas = np.stack([f.sigma for f in fields])
        self.log_peaks = np.array([f.log_peak for f in fields])
        self.D = per_target_sog_blocks(A_blocks, self.gamma, library, cfg.horizon)

        # with d_n = 0 every pair row is vacuous, so none are emitted
        self.pairs = [(i, k) for i in range(self.N) for k in range(i + 1, self.N)] if cfg.d_n > 0 else []
        self.n_x = self.N * p
        self.n = self.n_x + self.M + (1 if self.use_sog else 0)
        self.m = self.N + len(self.pairs) + self.M + (1 if self.use_sog else 0)
        # unit-norm gradients on the boundary; residuals then read as distances
        self._motion_rows = np.repeat(np.arange(self.N), p)
        self._motion_cols = np.arange(self.n_x)
        self._pi = np.array([i for i, _ in self.pairs], dtype=int)
        self._pk = np.array([k for _, k in self.pairs], dtype=int)
        self._pair_rows = self.N + np.repeat(np.arange(len(self.pairs)), p)
        self._pair_cols_i = (self._pi[:, None] * p + np.arange(p)).ravel()
        self._pair_cols_k = (self._pk[:, None] * p + np.arange(p)).ravel()
        self._motion_scale = 0.5 / cfg.d_m
        # tightened by half the solver tolerance so converged points pass the hard check
        self._hard_margin = 0.5 * cfg.solver.tol_c
        self._pair_scale = 0.5 / cfg.d_n if cfg.d_n > 0 else 1.0

        self.has_sensors = robots.size > 0
        self.observability_lost = not self.has_sensors
        if self.has_sensors:
            O = self.sog_blocks(self.x0)[0]
            self.observability_lost = bool(np.min(np.linalg.eigvalsh(O)) < EPS_OBS)
        self._cache_key = None
        self._cache = None

    # -- building blocks --------------------------------------------------

    def trace_cov(self, x):
        """Per-target ``tr P_j(x)`` and gradients of shape (M, N, p)."""
        x = np.asarray(x, dtype=float).reshape(self.N, self.p)
        if not self.has_sensors:
            return self.trace_prior.copy(), np.zeros((self.M, self.N, self.p))
        diff = x[self.row_robot][None, :, :] - self.e[:, None, :]          # (M, m, p)
        dist = np.sqrt((diff * diff).sum(axis=2))
        expo = self.row_lam * dist
        var = np.exp(np.minimum(expo, MAX_DECAY_EXPONENT)) / self.row_w     # (M, m)
        S = self.HPHt + var[:, :, None] * self._eye_rows
        G = np.linalg.solve(S, self.HP)                                     # (M, m, p)
        tr = self.trace_prior - (self.HP * G).sum(axis=(1, 2))
        dvar = (G * G).sum(axis=2) * np.where(expo < MAX_DECAY_EXPONENT, self.row_lam * var, 0.0)
        # diff is zero wherever dist is, so the guarded division is exact
        contrib = (dvar / np.where(dist > 0, dist, 1.0))[..., None] * diff  # (M, m, p)
        return tr, self.assign @ contrib

    def immunities(self, x):
        """Immunity ``pi_ij`` (N, M) and gradients w.r.t. ``x_i`` (N, M, p).

        Uses the smooth floor ``-log(phi + phi_floor)`` so the constraint
        stays differentiable where ``phi`` crosses the floor; it differs from
        ``-log(max(phi, phi_floor))`` by at most ``log 2``.
        """
        diff = x[:, None, :] - self.e[None, :, :]                           # (N, M, p)
        sd = (diff[:, :, None, :] @ self.sigmas)[:, :, 0, :]                # sigma symmetric
        log_phi = self.log_peaks[None, :] - 0.5 * (diff * sd).sum(axis=2)
        pi = -np.logaddexp(log_phi, _LOG_PHI_FLOOR)
        weight = expit(log_phi - _LOG_PHI_FLOOR)
        active = pi > PI_FLOOR
        pi = np.maximum(pi, PI_FLOOR)
        return pi, np.where(active[..., None], weight[..., None] * sd, 0.0)

    def sog_blocks(self, x):
        """Per-target SOG blocks ``O_j`` (M, p, p), immunities and their gradients."""
        x = np.asarray(x, dtype=float).reshape(self.N, self.p)
        pi, dpi = self.immunities(x)
        O = (pi[:, :, None, None] * self.D).sum(axis=0)
        return O, pi, dpi

    def trace_inv_sog(self, x):
        """``tr O_Pi(x)^{-1}`` and its gradient w.r.t. positions (N, p)."""
        x = np.asarray(x, dtype=float).reshape(self.N, self.p)
        O, pi, dpi = self.sog_blocks(x)
        if self.observability_lost:
            O = O + EPS_OBS * np.eye(self.p)
        Oinv = _inv_stack(O)
        val = float(np.trace(Oinv, axis1=1, axis2=2).sum())
        O2 = Oinv @ Oinv
        dval_dpi = -(O2[None] * self.D).sum(axis=(2, 3))                    # (N, M)
        grad = (dval_dpi[:, :, None] * dpi).sum(axis=1)
        return val, grad

    # -- NLP interface ------------------------------------------------------

    def split(self, z):
        z = np.asarray(z, dtype=float)
        x = z[:self.n_x].reshape(self.N, self.p)
        d1 = z[self.n_x:self.n_x + self.M]
        d2 = float(z[-1]) if self.use_sog else 0.0
        return x, d1, d2

    def evaluate(self, z):
        z = np.asarray(z, dtype=float)
        key = z.tobytes()
        if key == self._cache_key:
            return self._cache
        cfg = self.cfg
        x, d1, d2 = self.split(z)
        n, N, p, M = self.n, self.N, self.p, self.M
        f = cost_k1(self.delta_eff, d1, cfg.w1) + (cost_k2(self.delta_eff, d2, cfg.w2) if self.use_sog else 0.0)
        g = np.zeros(n)
        g[self.n_x:self.n_x + M] = cfg.w1 * self.delta_eff
        if self.use_sog:
            g[-1] = 2.0 * cfg.w2 * d2 / self.delta_eff

        c = np.empty(self.m)
        J = np.zeros((self.m, n))
        dx = x - self.x0
        c[:N] = ((dx * dx).sum(axis=1) - cfg.d_m ** 2) * self._motion_scale + self._hard_margin
        J[self._motion_rows, self._motion_cols] = (2.0 * self._motion_scale) * dx.ravel()
        r = N
        if self.pairs:
            v = x[self._pi] - x[self._pk]                                   # (pairs, p)
            c[r:r + len(self.pairs)] = (cfg.d_n ** 2 - (v * v).sum(axis=1)) * self._pair_scale + self._hard_margin
            gv = (2.0 * self._pair_scale) * v.ravel()
            J[self._pair_rows, self._pair_cols_i] = -gv
            J[self._pair_rows, self._pair_cols_k] = gv
            r += len(self.pairs)
        tr, dtr = self.trace_cov(x)
        c[r:r + M] = tr - cfg.rho1 - d1
        J[r:r + M, :self.n_x] = dtr.reshape(M, -1)
        J[r:r + M, self.n_x:self.n_x + M] = -np.eye(M)
        r += M
        if self.use_sog:
            ti, dti = self.trace_inv_sog(x)
            c[r] = ti - cfg.rho2 - d2
            J[r, :self.n_x] = dti.ravel()
            J[r, -1] = -1.0
        self._cache_key = key
        self._cache = (f, g, c, J)
        return self._cache

    def bounds(self):
        # the box around x0 contains the motion ball; it keeps line searches local
        lower = np.full(self.n, -np.inf)
        upper = np.full(self.n, np.inf)
        lower[:self.n_x] = self.x0.ravel() - self.cfg.d_m
        upper[:self.n_x] = self.x0.ravel() + self.cfg.d_m
        lower[self.n_x:] = 0.0
        return lower, upper

    @property
    def problem(self) -> NlpProblem:
        lower, upper = self.bounds()

        def con(k):
            return lambda z: self.evaluate(z)[2][k]

        def con_grad(k):
            return lambda z: self.evaluate(z)[3][k]

        return NlpProblem(
            n=self.n,
            objective=lambda z: self.evaluate(z)[0],
            constraints=[con(k) for k in range(self.m)],
            lower=lower,
            upper=upper,
            objective_grad=lambda z: self.evaluate(z)[1],
            constraint_grads=[con_grad(k) for k in range(self.m)],
            evaluate=self.evaluate,
            h_fd=self.cfg.solver.h_fd,
        )

    def warm_start(self) -> np.ndarray:
        """Current positions with slacks set to the constraint gaps at ``x0``."""
        tr, _ = self.trace_cov(self.x0)
        z = [self.x0.ravel(), np.maximum(0.0, tr - self.cfg.rho1)]
        if self.use_sog:
            ti = self.trace_inv_sog(self.x0)[0] if self.has_sensors else self.cfg.rho2
            z.append([max(0.0, ti - self.cfg.rho2)])
        return np.concatenate(z)


def assemble_nlp(x0, prior_state, prior_cov, gamma, library, fields, A_blocks,
                 cfg: ControllerConfig, margin: float) -> NlpProblem:
    """Build the per-step tracking NLP as a generic :class:`NlpProblem`."""
    return TrackingNlp(x0, prior_state, prior_cov, gamma, library, fields, A_blocks, cfg, margin).problem


def _motion_feasible(x, x0, cfg, tol=FEAS_TOL) -> bool:
    if np.any(np.linalg.norm(x - x0, axis=1) > cfg.d_m + tol):
        return False
    N = x.shape[0]
    for i in range(N):
        for k in range(i + 1, N):
            if np.linalg.norm(x[i] - x[k]) < cfg.d_n - tol:
                return False
    return True


def _decision_at(nlp: TrackingNlp, z, status, multipliers=None, iterations=0,
                 fallback=False, degraded=False) -> StepDecision:
    x, d1, d2 = nlp.split(z)
    f, _, c, _ = nlp.evaluate(z)
    tr, _ = nlp.trace_cov(x)
    ti = nlp.trace_inv_sog(x)[0] if nlp.has_sensors else np.inf
    return StepDecision(
        positions=x.copy(), delta1=np.maximum(d1, 0.0), delta2=max(d2, 0.0), objective=f,
        status=status, trace_cov=tr, trace_inv_sog=ti, residuals=c.copy(),
        observability_lost=nlp.observability_lost, degraded=degraded, fallback=fallback,
        multipliers=multipliers, iterations=iterations,
    )


def solve_step(x0, prior_state, prior_cov, gamma, library, fields, A_blocks,
               cfg: ControllerConfig, margin: float, multipliers=None) -> StepDecision:
    """Solve one control step; always returns motion-feasible positions.

    Falls back to holding position when the solver fails or returns a
    point violating the motion or separation constraints. With no
    functional sensors left, the team holds position and the decision is
    flagged ``degraded``.
    """
    nlp = TrackingNlp(x0, prior_state, prior_cov, gamma, library, fields, A_blocks, cfg, margin)
    z0 = nlp.warm_start()
    if not nlp.has_sensors:
        return _decision_at(nlp, z0, "no_sensors", fallback=True, degraded=True)
    if multipliers is not None and np.shape(multipliers) != (nlp.m,):
        multipliers = None
    sol = solve(nlp.problem, z0, cfg.solver, multipliers=multipliers)
    if sol.status == "failed":
        log.warning("controller solve failed (%s); holding position", sol.message)
        return _decision_at(nlp, z0, "failed", fallback=True)
    z = sol.z.copy()
    x = z[:nlp.n_x].reshape(nlp.N, nlp.p)
    step = x - nlp.x0
    length = np.linalg.norm(step, axis=1)
    over = length > cfg.d_m
    x[over] = nlp.x0[over] + step[over] * (cfg.d_m / length[over])[:, None]
    if not _motion_feasible(x, nlp.x0, cfg):
        log.warning("controller returned infeasible motion (status %s); holding position", sol.status)
        return _decision_at(nlp, z0, sol.status, fallback=True)
    z[:nlp.n_x] = x.ravel()
    return _decision_at(nlp, z, sol.status, multipliers=sol.multipliers, iterations=sol.iterations)
