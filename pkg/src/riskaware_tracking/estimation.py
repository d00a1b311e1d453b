"""Multi-target Kalman filter.

The covariance is kept block-diagonal across targets: cross-target blocks
are zeroed after each update. With block-diagonal ``H``, ``R`` and ``A``
they are zero up to round-off anyway.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sensing import SensorLibrary, build_measurement_model, team_noise_variances

PSD_TOL = 1e-10
INNOVATION_JITTER = 1e-9


@dataclass
class Estimate:
    """Stacked target estimate and its covariance.

    ``regularized`` is set when the innovation matrix of the update that
    produced this estimate had to be jittered.
    """

    state: np.ndarray
    covariance: np.ndarray
    regularized: bool = False

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=float).ravel()
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        n = self.state.size
        if self.covariance.shape != (n, n):
            raise ValueError(f"covariance shape {self.covariance.shape} does not match state size {n}")

    def copy(self) -> "Estimate":
        return Estimate(self.state.copy(), self.covariance.copy(), self.regularized)


def block_diag_mask(n_targets: int, dim: int) -> np.ndarray:
    return np.kron(np.eye(n_targets, dtype=bool), np.ones((dim, dim), dtype=bool))


def _clean(P: np.ndarray, dim: int | None) -> np.ndarray:
    P = 0.5 * (P + P.T)
    if dim is not None and P.shape[0] > dim:
        P = np.where(block_diag_mask(P.shape[0] // dim, dim), P, 0.0)
    vals, vecs = np.linalg.eigh(P)
    if vals.size and vals.min() < -PSD_TOL:
        P = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
        P = 0.5 * (P + P.T)
    return P


def predict(est: Estimate, A, Q) -> Estimate:
    """Prior ``(A e, A P A^T + Q)``. Target inputs are not propagated."""
    A = np.atleast_2d(A)
    P = A @ est.covariance @ A.T + np.atleast_2d(Q)
    return Estimate(A @ est.state, 0.5 * (P + P.T))


def _kalman_gain(P_prior, H, R):
    S = H @ P_prior @ H.T + R
    S = 0.5 * (S + S.T)
    vals = np.linalg.eigvalsh(S)
    regularized = bool(vals[0] <= INNOVATION_JITTER * max(1.0, vals[-1]) * 1e-6)
    if regularized:
        S = S + INNOVATION_JITTER * np.eye(S.shape[0])
    return np.linalg.solve(S, H @ P_prior).T, regularized


def update(prior: Estimate, y, H, R, dim: int | None = None) -> Estimate:
    """Kalman measurement update.

    Parameters
    ----------
    prior : Estimate
    y : array_like, shape (m,)
    H : array_like, shape (m, n)
    R : array_like, shape (m, m) or (m,)
        Measurement covariance; a 1-D array is taken as its diagonal.
    dim : int, optional
        Per-target state dimension. When given, cross-target covariance
        blocks of the posterior are zeroed.
    """
    y = np.asarray(y, dtype=float).ravel()
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if y.size == 0:
        return prior.copy()
    R = np.asarray(R, dtype=float)
    if R.ndim == 1:
        R = np.diag(R)
    if H.shape != (y.size, prior.state.size) or R.shape != (y.size, y.size):
        raise ValueError(
            f"H {H.shape} / R {R.shape} inconsistent with y ({y.size}) and state ({prior.state.size})"
        )
    P_prior = prior.covariance
    K, regularized = _kalman_gain(P_prior, H, R)
    state = prior.state + K @ (y - H @ prior.state)
    P = (np.eye(P_prior.shape[0]) - K @ H) @ P_prior
    return Estimate(state, _clean(P, dim), regularized)


def predicted_posterior_cov(robot_positions, prior_state, prior_cov, gamma,
                            library: SensorLibrary) -> np.ndarray:
    """Posterior covariance the team would reach measuring from ``robot_positions``.

    The noise is evaluated against the prior target estimate; the result
    does not depend on the realized measurement.
    """
    x = np.atleast_2d(np.asarray(robot_positions, dtype=float))
    p = x.shape[1]
    prior_state = np.asarray(prior_state, dtype=float).ravel()
    M = prior_state.size // p
    model = build_measurement_model(gamma, library, M)
    if model.n_rows == 0:
        return np.array(prior_cov, dtype=float, copy=True)
    r = team_noise_variances(x, prior_state, gamma, library)
    post = update(Estimate(prior_state, prior_cov), model.team_matrix @ prior_state,
                  model.team_matrix, r, dim=p)
    return post.covariance


def per_target_trace(est, j: int, dim: int) -> float:
    """Trace of the ``j``-th ``dim x dim`` diagonal block of the covariance."""
    P = est.covariance if isinstance(est, Estimate) else np.asarray(est)
    M = P.shape[0] // dim
    if not 0 <= j < M:
        raise IndexError(f"target index {j} out of range for {M} targets")
    return float(np.trace(P[j * dim:(j + 1) * dim, j * dim:(j + 1) * dim]))


def per_target_traces(P, dim: int) -> np.ndarray:
    P = np.asarray(P)
    d = np.diag(P)
    return d.reshape(-1, dim).sum(axis=1)
