"""Local solver for smooth inequality-constrained problems with box bounds.

Augmented-Lagrangian method of multipliers: the inner bound-constrained
subproblem is minimized with L-BFGS-B, the outer loop updates the
multipliers and grows the penalty when feasibility stalls.

Problem form::

    minimize    f(z)
    subject to  c_i(z) <= 0,   lower <= z <= upper
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

log = logging.getLogger(__name__)

STATUSES = ("converged", "max_iter", "infeasible_start_recovered", "failed")


@dataclass
class SolverOptions:
    tol_c: float = 1e-6
    tol_g: float = 1e-6
    max_outer: int = 50
    max_inner: int = 500
    penalty0: float = 1.0
    penalty_growth: float = 10.0
    max_penalty: float = 1e10
    multiplier_bound: float = 1e6
    multistart: int = 0
    multistart_radius: float = 0.1
    seed: int = 0
    gradient: str = "analytic"
    h_fd: float = 1e-5

    def __post_init__(self):
        if self.gradient not in ("analytic", "fd"):
            raise ValueError(f"gradient mode must be 'analytic' or 'fd', not {self.gradient!r}")
        if min(self.tol_c, self.tol_g, self.h_fd) <= 0:
            raise ValueError("tolerances and h_fd must be positive")
        if self.max_outer < 1 or self.max_inner < 1 or self.multistart < 0:
            raise ValueError("iteration limits must be >= 1 and multistart >= 0")


@dataclass
class NlpProblem:
    """Smooth NLP with ``c_i(z) <= 0`` constraints and box bounds.

    Gradients are taken from ``objective_grad`` / ``constraint_grads`` when
    given, otherwise by central differences with step ``h_fd``. A batched
    ``evaluate(z) -> (f, grad_f, c, jac_c)`` may be supplied for speed; it
    must agree with the per-callable definitions.
    """

    n: int
    objective: Callable
    constraints: Sequence[Callable] = ()
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    objective_grad: Optional[Callable] = None
    constraint_grads: Optional[Sequence[Optional[Callable]]] = None
    evaluate: Optional[Callable] = None
    h_fd: float = 1e-5

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("problem dimension must be >= 1")
        self.lower = np.full(self.n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float)
        self.upper = np.full(self.n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        if self.lower.shape != (self.n,) or self.upper.shape != (self.n,):
            raise ValueError("bounds must have shape (n,)")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        self.constraints = list(self.constraints)
        if self.constraint_grads is not None and len(self.constraint_grads) != len(self.constraints):
            raise ValueError("constraint_grads must match constraints")

    @property
    def m(self) -> int:
        return len(self.constraints)

    def project(self, z) -> np.ndarray:
        return np.clip(np.asarray(z, dtype=float), self.lower, self.upper)

    def cons(self, z) -> np.ndarray:
        return np.array([float(c(z)) for c in self.constraints])

    def _fd(self, fun, z, h):
        g = np.empty(self.n)
        for k in range(self.n):
            zp = z.copy()
            zm = z.copy()
            zp[k] += h
            zm[k] -= h
            g[k] = (fun(zp) - fun(zm)) / (2 * h)
        return g

    def objective_gradient(self, z, mode="analytic") -> np.ndarray:
        if mode == "analytic" and self.objective_grad is not None:
            return np.asarray(self.objective_grad(z), dtype=float)
        return self._fd(self.objective, z, self.h_fd)

    def constraint_gradient(self, k, z, mode="analytic") -> np.ndarray:
        grads = self.constraint_grads
        if mode == "analytic" and grads is not None and grads[k] is not None:
            return np.asarray(grads[k](z), dtype=float)
        return self._fd(self.constraints[k], z, self.h_fd)

    def evaluate_all(self, z, mode="analytic"):
        """Return ``(f, grad_f, c, jac_c)`` at ``z``."""
        if mode == "analytic" and self.evaluate is not None:
            return self.evaluate(z)
        f = float(self.objective(z))
        g = self.objective_gradient(z, mode)
        c = self.cons(z)
        J = np.array([self.constraint_gradient(k, z, mode) for k in range(self.m)]).reshape(self.m, self.n)
        return f, g, c, J


@dataclass
class NlpSolution:
    z: np.ndarray
    objective: float
    status: str
    residuals: np.ndarray
    max_violation: float
    iterations: int
    inner_iterations: int
    kkt_residual: float
    multipliers: np.ndarray
    message: str = ""
    merit_history: list = field(default_factory=list, repr=False)

    @property
    def success(self) -> bool:
        return self.status in ("converged", "infeasible_start_recovered")


class _NonFinite(FloatingPointError):
    pass


def _projected_gradient(z, g, lower, upper) -> float:
    return float(np.max(np.abs(z - np.clip(z - g, lower, upper)), initial=0.0))


def _al_terms(f, g, c, J, lam, mu):
    shifted = np.maximum(0.0, lam + mu * c)
    phi = f + (shifted @ shifted - lam @ lam) / (2 * mu)
    grad = g + J.T @ shifted
    return phi, grad


def _solve_single(problem: NlpProblem, z0, opts: SolverOptions, lam0=None, history=False):
    mode = opts.gradient
    z = problem.project(z0)
    m = problem.m
    lam = np.zeros(m) if lam0 is None else np.clip(np.asarray(lam0, dtype=float), 0, opts.multiplier_bound)
    mu = opts.penalty0
    merit = []

    def evaluate(zz):
        f, g, c, J = problem.evaluate_all(zz, mode)
        # one reduction catches any nan/inf (overflow in the sum counts too)
        if not np.isfinite(f + np.sum(g) + np.sum(c) + np.sum(J)):
            raise _NonFinite(f"non-finite objective or constraint at z={zz}")
        return f, np.asarray(g, dtype=float), np.asarray(c, dtype=float), np.asarray(J, dtype=float).reshape(m, problem.n)

    try:
        f, g, c, J = evaluate(z)
    except _NonFinite as exc:
        return NlpSolution(z, np.nan, "failed", np.full(m, np.nan), np.inf, 0, 0, np.inf, lam, str(exc))
    start_infeasible = m > 0 and float(np.max(c)) > opts.tol_c
    best_viol = np.inf
    inner_total = 0
    status = "max_iter"
    message = ""
    outer = 0
    bounds = list(zip(np.where(np.isfinite(problem.lower), problem.lower, None),
                      np.where(np.isfinite(problem.upper), problem.upper, None)))
    for outer in range(1, opts.max_outer + 1):
        lam_k, mu_k = lam.copy(), mu

        def al(zz):
            ff, gg, cc, JJ = evaluate(zz)
            return _al_terms(ff, gg, cc, JJ, lam_k, mu_k)

        if history:
            inner_merit = [al(z)[0]]
            cb = lambda zk: inner_merit.append(al(zk)[0])  # noqa: E731
        else:
            cb = None
        try:
            res = minimize(al, z, jac=True, method="L-BFGS-B", bounds=bounds, callback=cb,
                           options={"maxiter": opts.max_inner, "gtol": 0.5 * opts.tol_g,
                                    "ftol": 1e-15, "maxcor": 20})
            z = problem.project(res.x)
            inner_total += int(res.nit)
            f, g, c, J = evaluate(z)
        except _NonFinite as exc:
            status, message = "failed", str(exc)
            break
        if history:
            merit.append(inner_merit)
        viol = float(max(0.0, np.max(c))) if m else 0.0
        _, grad = _al_terms(f, g, c, J, lam_k, mu_k)
        kkt = _projected_gradient(z, grad, problem.lower, problem.upper)
        lam = np.clip(np.maximum(0.0, lam_k + mu_k * c), 0.0, opts.multiplier_bound) if m else lam
        if viol <= opts.tol_c and kkt <= opts.tol_g:
            status = "infeasible_start_recovered" if start_infeasible else "converged"
            break
        if viol > 0.25 * best_viol and viol > opts.tol_c:
            mu = min(mu * opts.penalty_growth, opts.max_penalty)
        best_viol = min(best_viol, viol)

    residuals = np.asarray(c, dtype=float)
    viol = float(max(0.0, np.max(residuals))) if m else 0.0
    if status != "failed":
        kkt = _projected_gradient(z, g + J.T @ lam, problem.lower, problem.upper)
    else:
        kkt = np.inf
    return NlpSolution(z, float(f), status, residuals, viol, outer, inner_total, kkt, lam, message, merit)


def _better(a: NlpSolution, b: NlpSolution, tol_c: float) -> bool:
    """Whether ``a`` beats ``b``: feasible first, then objective, then violation."""
    if a.status == "failed":
        return False
    if b.status == "failed":
        return True
    fa, fb = a.max_violation <= tol_c, b.max_violation <= tol_c
    if fa != fb:
        return fa
    if fa:
        return a.objective < b.objective
    return a.max_violation < b.max_violation


def solve(problem: NlpProblem, z0, opts: SolverOptions | None = None, multipliers=None,
          history: bool = False) -> NlpSolution:
    """Minimize ``problem`` from the warm start ``z0``.

    Parameters
    ----------
    problem : NlpProblem
    z0 : array_like
        Warm start; projected onto the bounds.
    opts : SolverOptions, optional
    multipliers : array_like, optional
        Initial constraint multipliers (e.g. from the previous solve).
    history : bool
        Record augmented-Lagrangian merit values along every inner solve.

    Returns
    -------
    NlpSolution
        Residuals and the KKT residual are recomputed at the returned point.
    """
    opts = opts or SolverOptions()
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (problem.n,):
        raise ValueError(f"warm start has shape {z0.shape}, expected ({problem.n},)")
    best = _solve_single(problem, z0, opts, multipliers, history)
    if opts.multistart:
        rng = np.random.default_rng(opts.seed)
        for _ in range(opts.multistart):
            d = rng.standard_normal(problem.n)
            d *= opts.multistart_radius * rng.random() ** (1.0 / problem.n) / max(np.linalg.norm(d), 1e-300)
            cand = _solve_single(problem, z0 + d, opts, multipliers, history)
            if _better(cand, best, opts.tol_c):
                best = cand
    if best.status == "failed":
        log.warning("NLP solve failed: %s", best.message)
    return best


def check_gradients(problem: NlpProblem, z, h_fd: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Covers the objective and every constraint. Functions without an
    analytic gradient are skipped. The error for one function is
    ``max|g_a - g_fd| / max(max|g_a|, max|g_fd|, 1e-8)``.
    """
    z = np.asarray(z, dtype=float)
    fd = NlpProblem(problem.n, problem.objective, problem.constraints, h_fd=h_fd)
    pairs = []
    if problem.objective_grad is not None:
        pairs.append((problem.objective_gradient(z), fd.objective_gradient(z, "fd")))
    if problem.constraint_grads is not None:
        for k, gk in enumerate(problem.constraint_grads):
            if gk is not None:
                pairs.append((problem.constraint_gradient(k, z), fd.constraint_gradient(k, z, "fd")))
    if problem.evaluate is not None:
        _, g, _, J = problem.evaluate(z)
        pairs.append((np.asarray(g), fd.objective_gradient(z, "fd")))
        for k in range(problem.m):
            pairs.append((np.asarray(J)[k], fd.constraint_gradient(k, z, "fd")))
    worst = 0.0
    for ga, gf in pairs:
        scale = max(np.max(np.abs(ga), initial=0.0), np.max(np.abs(gf), initial=0.0), 1e-8)
        worst = max(worst, float(np.max(np.abs(ga - gf), initial=0.0)) / scale)
    return worst
