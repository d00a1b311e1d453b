"""Observability Gramians, the safety-weighted Gramian and sensing margin."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .sensing import SensorLibrary, as_sensor_matrix, team_row_index
from .world import PHI_FLOOR

EPS_OBS = 1e-9
EPS_DET = 1e-12
PI_FLOOR = 1e-9
DEFAULT_HORIZON = 10


class ConfigurationError(ValueError):
    """Raised when a scenario cannot be set up as specified."""


def gramian(A, H, T: int) -> np.ndarray:
    """Finite-horizon observability Gramian ``sum_k (A^T)^k H^T H A^k``."""
    if T < 1:
        raise ValueError("horizon T must be >= 1")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    n = A.shape[0]
    O = np.zeros((n, n))
    HAk = H.reshape(-1, n)
    for _ in range(T):
        O += HAk.T @ HAk
        HAk = HAk @ A
    return 0.5 * (O + O.T)


def weighted_gramian(A, H, weights, T: int) -> np.ndarray:
    """``sum_k (A^T)^k H^T W H A^k`` with ``W = diag(weights)``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    H = np.asarray(H, dtype=float).reshape(-1, n)
    W = np.asarray(weights, dtype=float)
    M = H.T @ (W[:, None] * H)
    O = np.zeros((n, n))
    Ak = np.eye(n)
    for _ in range(T):
        O += Ak.T @ M @ Ak
        Ak = Ak @ A
    return 0.5 * (O + O.T)


def immunity_values(robot_positions, target_positions, fields) -> np.ndarray:
    """``(N, M)`` array of immunities ``pi_j(x_i)``, floored at ``PI_FLOOR``."""
    x = np.atleast_2d(np.asarray(robot_positions, dtype=float))
    e = np.asarray(target_positions, dtype=float).reshape(-1, x.shape[1])
    out = np.empty((x.shape[0], e.shape[0]))
    for j, f in enumerate(fields):
        v = x - e[j]
        quad = np.einsum("ni,ij,nj->n", v, f.sigma, v)
        log_phi = np.minimum(f.log_peak - 0.5 * quad, 0.0)
        out[:, j] = -np.maximum(log_phi, math.log(PHI_FLOOR))
    return np.maximum(out, PI_FLOOR)


def safety_weights(gamma, robot_positions, target_estimates, fields) -> np.ndarray:
    """Diagonal of ``Pi``, aligned with the team measurement rows."""
    pis = immunity_values(robot_positions, target_estimates, fields)
    idx = team_row_index(gamma, pis.shape[1])
    if idx.shape[0] == 0:
        return np.zeros(0)
    return pis[idx[:, 0], idx[:, 1]]


def safety_weight_matrix(gamma, robot_positions, target_estimates, fields) -> np.ndarray:
    """``Pi = (+)_i (+)_j I_{|gamma_i|} kron pi_j(x_i)`` as a dense diagonal matrix."""
    return np.diag(safety_weights(gamma, robot_positions, target_estimates, fields))


@dataclass
class SogContext:
    """Inputs of the safety-aware observability Gramian."""

    A: np.ndarray
    H: np.ndarray
    Pi: np.ndarray
    T: int = DEFAULT_HORIZON

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.Pi = np.atleast_2d(np.asarray(self.Pi, dtype=float))
        n = self.A.shape[0]
        self.H = np.asarray(self.H, dtype=float).reshape(-1, n)
        m = self.H.shape[0]
        if self.Pi.shape != (m, m):
            raise ValueError(f"Pi shape {self.Pi.shape} does not match {m} measurement rows")
        if m and not np.allclose(self.Pi, np.diag(np.diag(self.Pi))):
            raise ValueError("Pi must be diagonal")
        if m and np.diag(self.Pi).min() <= 0:
            raise ValueError("Pi must have strictly positive diagonal")
        if self.T < 1:
            raise ValueError("horizon T must be >= 1")


def sog(ctx: SogContext) -> np.ndarray:
    """Safety-aware observability Gramian ``sum_k (A^T)^k H^T Pi H A^k``."""
    return weighted_gramian(ctx.A, ctx.H, np.diag(ctx.Pi), ctx.T)


@dataclass(frozen=True)
class TraceInverse:
    value: float
    observability_lost: bool
    min_eigenvalue: float

    def __float__(self):
        return self.value


def trace_inv_sog(O, eps: float = EPS_OBS) -> TraceInverse:
    """``trace(O^{-1})`` via Cholesky; regularized and flagged when near-singular."""
    O = np.atleast_2d(np.asarray(O, dtype=float))
    O = 0.5 * (O + O.T)
    lam_min = float(np.linalg.eigvalsh(O)[0]) if O.size else 0.0
    lost = lam_min < eps
    if lost:
        O = O + eps * np.eye(O.shape[0])
    L = np.linalg.cholesky(O)
    Linv = np.linalg.solve(L, np.eye(O.shape[0]))
    return TraceInverse(float(np.sum(Linv * Linv)), bool(lost), lam_min)


def minimal_sensor_matrix(library: SensorLibrary, A_single, T: int = DEFAULT_HORIZON,
                          max_per_type: int = 1):
    """Smallest sensor multiset that makes one target block observable.

    Searches type-count vectors (each count ``<= max_per_type``) in order of
    increasing total count; within a count, in lexicographic type order.

    Returns
    -------
    count : int
        Minimal number of sensors.
    frobenius_norm : float
        ``sqrt(count)``, the Frobenius norm of a minimal 0/1 sensor matrix.
    """
    U = library.n_types
    if U > 16:
        raise ValueError("exhaustive search limited to 16 sensor types")
    A_single = np.atleast_2d(np.asarray(A_single, dtype=float))
    if A_single.shape[0] != library.dim:
        raise ValueError("process matrix does not match sensor row dimension")
    for m in range(1, U * max_per_type + 1):
        for combo in itertools.combinations_with_replacement(range(U), m):
            if max(combo.count(k) for k in set(combo)) > max_per_type:
                continue
            H = library.rows[list(combo)]
            if np.linalg.det(gramian(A_single, H, T)) > EPS_DET:
                return m, math.sqrt(m)
    raise ConfigurationError("no combination of library sensors makes the targets observable")


def sensing_margin(gamma, minimal_norm: float) -> float:
    """``||Gamma||_F - ||Gamma_min||_F`` (can be negative)."""
    g = as_sensor_matrix(gamma)
    return math.sqrt(float(np.sum(g))) - minimal_norm


def per_target_sog_blocks(A_blocks, gamma, library: SensorLibrary, T: int) -> np.ndarray:
    """``D[i, j] = sum_k (A_j^T)^k H_ij^T H_ij A_j^k`` with shape (N, M, p, p).

    The team SOG is block-diagonal over targets, with block
    ``O_j = sum_i pi_j(x_i) D[i, j]``.
    """
    gamma = as_sensor_matrix(gamma, library.n_types)
    N, p = gamma.shape[0], library.dim
    M = len(A_blocks)
    D = np.zeros((N, M, p, p))
    for i in range(N):
        H = library.rows[np.flatnonzero(gamma[i])]
        if H.shape[0] == 0:
            continue
        for j, Aj in enumerate(A_blocks):
            D[i, j] = gramian(Aj, H, T)
    return D
