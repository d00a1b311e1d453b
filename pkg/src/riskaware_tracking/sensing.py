"""Heterogeneous linear sensor model.

Each sensor type ``l`` contributes one output row ``h_l`` and a noise model
whose precision decays exponentially with robot-target distance::

    R_l^{-1}(d) = w_l * exp(-lambda_l * d)

The sensor matrix ``gamma`` is an ``(N, U)`` binary array; robot ``i`` carries
sensor ``l`` iff ``gamma[i, l] == 1``. All indices are zero-based.

Team measurement rows are ordered robot-major, then target, then the robot's
sensors in ascending type order. Every helper here that produces a
row-aligned quantity (``H``, ``R``, the row index) follows that order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

#: Cap on ``lambda * d``; beyond it a measurement carries no usable information
#: and the variance would overflow.
MAX_DECAY_EXPONENT = 300.0


@dataclass(frozen=True)
class SensorLibrary:
    """Output rows and noise parameters for the ``U`` sensor types.

    Parameters
    ----------
    rows : array_like, shape (U, p)
        One output row per sensor type.
    weights : array_like, shape (U,)
        Peak precision ``w_l`` (strictly positive).
    decay : array_like, shape (U,)
        Distance decay rate ``lambda_l`` (nonnegative).
    """

    rows: np.ndarray
    weights: np.ndarray
    decay: np.ndarray

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        decay = np.atleast_1d(np.asarray(self.decay, dtype=float))
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise ValueError("sensor library needs at least one output row")
        if weights.shape != (rows.shape[0],) or decay.shape != (rows.shape[0],):
            raise ValueError(
                f"expected {rows.shape[0]} weights and decay rates, got "
                f"{weights.shape} and {decay.shape}"
            )
        if np.any(weights <= 0):
            raise ValueError("sensor weights must be > 0")
        if np.any(decay < 0):
            raise ValueError("sensor decay rates must be >= 0")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "decay", decay)

    @property
    def n_types(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def permuted(self, order) -> "SensorLibrary":
        order = np.asarray(order)
        return SensorLibrary(self.rows[order], self.weights[order], self.decay[order])


def as_sensor_matrix(gamma, n_types: int | None = None) -> np.ndarray:
    """Validate and return ``gamma`` as an integer 0/1 array of shape (N, U)."""
    arr = np.asarray(gamma)
    if arr.ndim != 2:
        raise ValueError(f"sensor matrix must be 2-D, got shape {arr.shape}")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("sensor matrix entries must be exactly 0 or 1")
    if n_types is not None and arr.shape[1] != n_types:
        raise ValueError(
            f"sensor matrix has {arr.shape[1]} columns but library has {n_types} types"
        )
    return arr.astype(np.int64)


def sensor_indices(gamma, i: int) -> list[int]:
    """Ascending sensor-type indices carried by robot ``i``."""
    gamma = as_sensor_matrix(gamma)
    if not 0 <= i < gamma.shape[0]:
        raise IndexError(f"robot index {i} out of range for {gamma.shape[0]} robots")
    return [int(j) for j in np.flatnonzero(gamma[i])]


@dataclass(frozen=True)
class MeasurementModel:
    """Per-robot measurement blocks and the stacked team matrix.

    ``row_index`` has one ``(robot, target, sensor_type)`` triple per row of
    ``team_matrix``.
    """

    per_robot_blocks: list
    team_matrix: np.ndarray
    row_index: np.ndarray = field(repr=False)

    @property
    def n_rows(self) -> int:
        return self.team_matrix.shape[0]


def team_row_index(gamma, n_targets: int) -> np.ndarray:
    """Return an ``(m, 3)`` int array of (robot, target, sensor) per team row."""
    gamma = as_sensor_matrix(gamma)
    out = []
    for i in range(gamma.shape[0]):
        sensors = np.flatnonzero(gamma[i])
        for j in range(n_targets):
            for s in sensors:
                out.append((i, j, s))
    return np.array(out, dtype=np.int64).reshape(-1, 3)


def build_measurement_model(gamma, library: SensorLibrary, n_targets: int,
                            state_dim: int | None = None) -> MeasurementModel:
    """Assemble ``H_ij`` for every robot and the team matrix ``H``.

    ``H_i = I_M kron H_ij`` and ``H = [H_1; ...; H_N]``. Robots without
    functional sensors contribute zero rows.
    """
    gamma = as_sensor_matrix(gamma, library.n_types)
    p = library.dim
    if state_dim is not None and state_dim != p:
        raise ValueError(f"library row dimension {p} does not match target state dimension {state_dim}")
    if n_targets < 1:
        raise ValueError("need at least one target")
    blocks = [library.rows[np.flatnonzero(row)] for row in gamma]
    eye = np.eye(n_targets)
    stacked = [np.kron(eye, b) for b in blocks if b.shape[0]]
    if stacked:
        team = np.vstack(stacked)
    else:
        team = np.zeros((0, n_targets * p))
    return MeasurementModel(blocks, team, team_row_index(gamma, n_targets))


def noise_precision(robot_pos, target_pos, sensors, library: SensorLibrary) -> np.ndarray:
    """Diagonal of ``R_ij^{-1}`` for the listed sensor types."""
    sensors = np.asarray(sensors, dtype=np.int64)
    d = np.linalg.norm(np.asarray(robot_pos, dtype=float) - np.asarray(target_pos, dtype=float))
    return library.weights[sensors] * np.exp(-np.minimum(library.decay[sensors] * d, MAX_DECAY_EXPONENT))


def noise_covariance(robot_pos, target_pos, sensors, library: SensorLibrary) -> np.ndarray:
    """Diagonal measurement covariance ``R_ij`` (shape ``(|gamma_i|, |gamma_i|)``)."""
    return np.diag(1.0 / noise_precision(robot_pos, target_pos, sensors, library))


def team_noise_variances(robot_positions, target_positions, gamma,
                         library: SensorLibrary) -> np.ndarray:
    """Diagonal of the team covariance ``R``, aligned with the team rows.

    Parameters
    ----------
    robot_positions : array_like, shape (N, p)
    target_positions : array_like, shape (M, p) or (M*p,)
        Positions at which the noise is evaluated (true or estimated).
    """
    x = np.asarray(robot_positions, dtype=float)
    p = x.shape[1]
    e = np.asarray(target_positions, dtype=float).reshape(-1, p)
    idx = team_row_index(gamma, e.shape[0])
    if idx.shape[0] == 0:
        return np.zeros(0)
    d = np.linalg.norm(x[idx[:, 0]] - e[idx[:, 1]], axis=1)
    s = idx[:, 2]
    return np.exp(np.minimum(library.decay[s] * d, MAX_DECAY_EXPONENT)) / library.weights[s]


def team_noise_covariance(robot_positions, target_positions, gamma,
                          library: SensorLibrary) -> np.ndarray:
    """Block-diagonal ``R = R_11 (+) R_12 (+) ... (+) R_NM`` as a dense matrix."""
    return np.diag(team_noise_variances(robot_positions, target_positions, gamma, library))


def apply_failures(gamma, events):
    """Zero the ``(robot, sensor)`` entries named in ``events``.

    Returns
    -------
    new_gamma : ndarray
    ignored : list of tuple
        Events that referenced an already-failed sensor (including repeats
        within ``events``).
    """
    new = as_sensor_matrix(gamma).copy()
    ignored = []
    for i, s in events:
        if new[i, s] == 0:
            ignored.append((int(i), int(s)))
            continue
        new[i, s] = 0
    if ignored:
        warnings.warn(f"ignored failure events on already-failed sensors: {ignored}",
                      stacklevel=2)
    return new, ignored
