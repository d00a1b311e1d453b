"""Ground-truth simulation: targets, risk fields, measurements, failures.

The world owns a single ``numpy.random.Generator``. Within one control step
random numbers are drawn in a fixed order: process noise, measurement noise,
detection coins (one per robot, always), then the failed-sensor choices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .sensing import SensorLibrary, team_noise_variances, build_measurement_model

#: Lower bound on the risk value inside the immunity logarithm.
PHI_FLOOR = 1e-12


# -- target input policies ---------------------------------------------------

@dataclass(frozen=True)
class ConstantInput:
    u: np.ndarray

    def __call__(self, t: int, state: np.ndarray) -> np.ndarray:
        return np.asarray(self.u, dtype=float)


@dataclass(frozen=True)
class ScheduleInput:
    """Piecewise-constant input: ``inputs[k]`` applies from ``starts[k]`` on."""

    starts: tuple
    inputs: tuple

    def __post_init__(self):
        if len(self.starts) != len(self.inputs) or not self.starts:
            raise ValueError("schedule needs matching, non-empty starts and inputs")
        if list(self.starts) != sorted(self.starts) or self.starts[0] != 0:
            raise ValueError("schedule starts must be sorted and begin at 0")

    def __call__(self, t: int, state: np.ndarray) -> np.ndarray:
        k = int(np.searchsorted(self.starts, t, side="right")) - 1
        return np.asarray(self.inputs[k], dtype=float)


@dataclass(frozen=True)
class WaypointFollower:
    """Track a point moving along the waypoint polyline at ``speed`` per step.

    The reference at step ``t`` sits at arc length ``speed * t`` (held at the
    last waypoint, or wrapped when ``loop``). The input steers toward the next
    reference and is capped at ``max_gain * speed`` in norm; with
    ``max_gain=None`` the target is pulled straight onto the reference, so
    process noise acts as jitter around the path.
    """

    points: tuple
    speed: float
    loop: bool = False
    max_gain: float | None = 2.0

    def reference(self, s: float) -> np.ndarray:
        pts = np.asarray(self.points, dtype=float)
        if self.loop:
            pts = np.vstack([pts, pts[:1]])
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        total = seg.sum()
        if total == 0:
            return pts[0]
        s = s % total if self.loop else min(s, total)
        k = int(np.searchsorted(np.cumsum(seg), s, side="left"))
        k = min(k, len(seg) - 1)
        s0 = s - (np.cumsum(seg)[k] - seg[k])
        return pts[k] + (pts[k + 1] - pts[k]) * (s0 / seg[k] if seg[k] else 0.0)

    def __call__(self, t: int, state: np.ndarray) -> np.ndarray:
        u = self.reference(self.speed * (t + 1)) - np.asarray(state, dtype=float)
        if self.max_gain is None:
            return u
        n = np.linalg.norm(u)
        cap = self.max_gain * self.speed
        return u if n <= cap else u * (cap / n)


@dataclass
class TargetModel:
    """One-step linear target dynamics ``e' = A e + B u + w``, ``w ~ N(0, Q)``."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    policy: object = None
    _noise_factor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        p = self.A.shape[0]
        if self.A.shape != (p, p) or self.Q.shape != (p, p) or self.B.shape[0] != p:
            raise ValueError(
                f"inconsistent target model shapes A{self.A.shape} B{self.B.shape} Q{self.Q.shape}"
            )
        if not np.allclose(self.Q, self.Q.T, atol=1e-12):
            raise ValueError("process noise covariance Q must be symmetric")
        vals, vecs = np.linalg.eigh(self.Q)
        if vals.min() < -1e-10:
            raise ValueError("process noise covariance Q must be positive semidefinite")
        self._noise_factor = vecs * np.sqrt(np.clip(vals, 0.0, None))
        if self.policy is None:
            self.policy = ConstantInput(np.zeros(self.B.shape[1]))

    @property
    def dim(self) -> int:
        return self.A.shape[0]


# -- risk fields -------------------------------------------------------------

@dataclass(frozen=True)
class RiskField:
    """Gaussian detection-probability field centred on its target.

    ``phi(x) = c / (2 pi |Sigma|) * exp(-0.5 (x - e)^T Sigma (x - e))``.
    ``Sigma`` enters the exponent directly (precision-like).
    """

    c: float
    sigma: np.ndarray
    kind: str = "gaussian"

    def __post_init__(self):
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        object.__setattr__(self, "sigma", sigma)
        if self.kind != "gaussian":
            raise ValueError(f"unsupported risk field kind {self.kind!r}")
        if self.c <= 0:
            raise ValueError("risk field scale c must be > 0")
        if not np.allclose(sigma, sigma.T, atol=1e-12):
            raise ValueError("risk field Sigma must be symmetric")
        if np.linalg.eigvalsh(sigma).min() <= 0:
            raise ValueError("risk field Sigma must be positive definite")
        if self.peak > 1.0:
            raise ValueError(f"risk field peak {self.peak:.4g} exceeds 1")

    @property
    def peak(self) -> float:
        return self.c / (2.0 * math.pi * float(np.linalg.det(self.sigma)))

    @property
    def log_peak(self) -> float:
        return math.log(self.peak)


def risk(field: RiskField, x, center) -> float:
    """Detection probability of a robot at ``x`` by a target at ``center``."""
    v = np.asarray(x, dtype=float) - np.asarray(center, dtype=float)
    val = field.peak * math.exp(-0.5 * float(v @ field.sigma @ v))
    return min(max(val, 0.0), 1.0)


def immunity(field: RiskField, x, center) -> float:
    """``-log`` of the risk, floored at ``PHI_FLOOR`` so it stays finite."""
    return -math.log(max(risk(field, x, center), PHI_FLOOR))


def immunity_from_risk(phi) -> np.ndarray:
    return -np.log(np.maximum(phi, PHI_FLOOR))


# -- world state ---------------------------------------------------------------

@dataclass
class WorldState:
    robot_positions: np.ndarray
    target_states: np.ndarray
    rng: np.random.Generator
    time_step: int = 0

    def __post_init__(self):
        self.robot_positions = np.atleast_2d(np.asarray(self.robot_positions, dtype=float))
        self.target_states = np.asarray(self.target_states, dtype=float).ravel()

    @property
    def n_robots(self) -> int:
        return self.robot_positions.shape[0]

    @property
    def dim(self) -> int:
        return self.robot_positions.shape[1]

    @property
    def n_targets(self) -> int:
        return self.target_states.size // self.dim

    def target_positions(self) -> np.ndarray:
        return self.target_states.reshape(self.n_targets, self.dim)


def step_targets(world: WorldState, models) -> WorldState:
    """Advance every target one step (in place) and return ``world``."""
    if len(models) != world.n_targets:
        raise ValueError(f"{len(models)} target models for {world.n_targets} targets")
    p = world.dim
    new = np.empty_like(world.target_states)
    for j, m in enumerate(models):
        e = world.target_states[j * p:(j + 1) * p]
        u = m.policy(world.time_step, e)
        z = world.rng.standard_normal(p)
        new[j * p:(j + 1) * p] = m.A @ e + m.B @ u + m._noise_factor @ z
    world.target_states = new
    world.time_step += 1
    return world


def generate_measurements(world: WorldState, gamma, library: SensorLibrary,
                          noiseless: bool = False) -> np.ndarray:
    """Stacked team measurement ``y = H e + nu`` at the true positions.

    Returns an empty vector when the team has no functional sensors.
    """
    model = build_measurement_model(gamma, library, world.n_targets)
    if model.n_rows == 0:
        return np.zeros(0)
    y = model.team_matrix @ world.target_states
    if noiseless:
        return y
    var = team_noise_variances(world.robot_positions, world.target_states, gamma, library)
    return y + np.sqrt(var) * world.rng.standard_normal(var.size)


def detection_probabilities(robot_positions, target_positions, fields) -> np.ndarray:
    """Per-robot probability of being detected by at least one target."""
    x = np.atleast_2d(robot_positions)
    e = np.atleast_2d(target_positions)
    miss = np.ones(x.shape[0])
    for j, f in enumerate(fields):
        for i in range(x.shape[0]):
            miss[i] *= 1.0 - risk(f, x[i], e[j])
    return 1.0 - miss


def simulate_failures(world: WorldState, gamma, fields) -> list:
    """Draw target-induced sensor failures at the current robot positions.

    Robot ``i`` is detected with probability ``1 - prod_j (1 - phi_j(x_i))``
    (independent attempts by the targets, combined into one coin per robot);
    a detected robot loses exactly one of its functional sensors, chosen
    uniformly. Risk is evaluated at the true target positions.

    Returns
    -------
    list of (robot, sensor_type) tuples
    """
    if len(fields) != world.n_targets:
        raise ValueError(f"{len(fields)} risk fields for {world.n_targets} targets")
    gamma = np.asarray(gamma)
    p_detect = detection_probabilities(world.robot_positions, world.target_positions(), fields)
    coins = world.rng.random(world.n_robots)
    events = []
    for i in np.flatnonzero(coins < p_detect):
        functional = np.flatnonzero(gamma[i])
        if functional.size == 0:
            continue
        k = int(world.rng.integers(functional.size))
        events.append((int(i), int(functional[k])))
    return events
