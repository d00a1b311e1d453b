"""Closed-loop simulation and the experiment drivers.

One iteration of the loop:

1. targets advance (skipped on the first iteration) and the team measures
   them from its current positions;
2. Kalman update, then prediction to the next measurement time;
3. the controller picks next positions from that prediction and the robots
   move there;
4. targets may detect robots at their new positions, failing sensors;
5. the sensing margin is recomputed.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import controller as ctl
from .config import Runtime, ScenarioConfig, build_runtime
from .estimation import Estimate, predict, predicted_posterior_cov, update
from .observability import EPS_DET, gramian, sensing_margin
from .sensing import apply_failures, build_measurement_model, team_noise_variances
from .world import WorldState, generate_measurements, simulate_failures, step_targets

log = logging.getLogger(__name__)

MARGIN_ZERO_TOL = 1e-12


@dataclass
class StepRecord:
    step: int
    true_targets: np.ndarray
    estimate: np.ndarray
    trace_cov: np.ndarray
    trace_inv_sog: float
    robot_positions: np.ndarray
    gamma: np.ndarray
    failures: list
    margin: float
    delta1: np.ndarray
    delta2: float
    objective: float
    status: str
    observability_lost: bool
    wall_ms: float

    @property
    def total_tracking_error(self) -> float:
        return float(np.sum(self.trace_cov))


@dataclass
class RunLog:
    config: ScenarioConfig
    seed: int
    mode: str
    minimal_norm: float
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def margins(self) -> np.ndarray:
        return np.array([r.margin for r in self.records])

    @property
    def tracking_errors(self) -> np.ndarray:
        return np.array([r.total_tracking_error for r in self.records])

    def time_to_zero_margin(self) -> int:
        """First step at which the margin is <= 0, or the run length if never."""
        hits = np.flatnonzero(self.margins <= MARGIN_ZERO_TOL)
        return int(hits[0]) if hits.size else len(self.records)

    @property
    def degraded(self) -> bool:
        """Observability was lost before the final step."""
        return any(r.observability_lost for r in self.records[:-1])

    @property
    def mean_step_ms(self) -> float:
        return float(np.mean([r.wall_ms for r in self.records])) if self.records else 0.0


def team_observable(rt: Runtime, gamma) -> bool:
    """Whether the functional sensors still make every target block observable."""
    rows = rt.library.rows[np.flatnonzero(np.asarray(gamma).sum(axis=0))]
    if rows.shape[0] == 0:
        return False
    return all(np.linalg.det(gramian(A, rows, rt.controller.horizon)) > EPS_DET for A in rt.A_blocks)


class Simulation:
    """Stateful closed-loop run; call :meth:`step` repeatedly."""

    def __init__(self, cfg: ScenarioConfig, seed: int | None = None, mode: str | None = None,
                 failures: bool = True):
        self.cfg = cfg
        self.mode = mode or cfg.run.mode
        if self.mode == "delta_sweep":
            self.mode = "risk_aware"
        self.seed = cfg.run.seed if seed is None else int(seed)
        self.rt = build_runtime(cfg)
        self.rt.controller.use_sog = self.mode != "no_sog"
        self.failures_enabled = failures
        self.world = WorldState(self.rt.initial_positions.copy(), self.rt.initial_targets.copy(),
                                np.random.default_rng(self.seed))
        self.gamma = self.rt.gamma.copy()
        self.prior = self.rt.initial_estimate.copy()
        self.estimate = self.prior
        self.margin = sensing_margin(self.gamma, self.rt.minimal_norm)
        self.multipliers = None
        self.t = 0

    def step(self) -> StepRecord:
        rt, world, p = self.rt, self.world, self.rt.dim
        t0 = time.perf_counter()
        if self.t > 0:
            step_targets(world, rt.target_models)
        y = generate_measurements(world, self.gamma, rt.library)
        if y.size:
            model = build_measurement_model(self.gamma, rt.library, rt.n_targets)
            r = team_noise_variances(world.robot_positions, self.prior.state, self.gamma, rt.library)
            self.estimate = update(self.prior, y, model.team_matrix, r, dim=p)
        else:
            self.estimate = self.prior.copy()
        next_prior = predict(self.estimate, rt.team_A, rt.team_Q)

        decision = ctl.solve_step(world.robot_positions, next_prior.state, next_prior.covariance,
                                  self.gamma, rt.library, rt.fields, rt.A_blocks, rt.controller,
                                  self.margin, multipliers=self.multipliers)
        self.multipliers = decision.multipliers
        world.robot_positions = decision.positions.copy()

        events = simulate_failures(world, self.gamma, rt.fields) if self.failures_enabled else []
        if events:
            self.gamma, _ = apply_failures(self.gamma, events)
        self.margin = sensing_margin(self.gamma, rt.minimal_norm)
        self.prior = next_prior

        traces = np.diag(self.estimate.covariance).reshape(-1, p).sum(axis=1)
        rec = StepRecord(
            step=self.t,
            true_targets=world.target_states.copy(),
            estimate=self.estimate.state.copy(),
            trace_cov=traces,
            trace_inv_sog=float(decision.trace_inv_sog),
            robot_positions=decision.positions.copy(),
            gamma=self.gamma.copy(),
            failures=events,
            margin=self.margin,
            delta1=decision.delta1.copy(),
            delta2=float(decision.delta2),
            objective=float(decision.objective),
            status=decision.status,
            observability_lost=not team_observable(rt, self.gamma),
            wall_ms=(time.perf_counter() - t0) * 1e3,
        )
        self.t += 1
        return rec


def run_scenario(cfg: ScenarioConfig, seed: int | None = None, steps: int | None = None,
                 mode: str | None = None, failures: bool = True) -> RunLog:
    """Run the closed loop for ``steps`` iterations (default from the config)."""
    sim = Simulation(cfg, seed=seed, mode=mode, failures=failures)
    n = cfg.run.steps if steps is None else int(steps)
    runlog = RunLog(cfg, sim.seed, sim.mode, sim.rt.minimal_norm)
    for _ in range(n):
        runlog.records.append(sim.step())
    return runlog


@dataclass
class AblationSummary:
    seeds: list
    steps: int
    tracking_error: dict      # mode -> (n_seeds, steps)
    margin: dict              # mode -> (n_seeds, steps)
    time_to_zero: dict        # mode -> (n_seeds,)

    MODES = ("risk_aware", "no_sog")

    def mean(self, quantity: str, mode: str) -> np.ndarray:
        return getattr(self, quantity)[mode].mean(axis=0)

    def std(self, quantity: str, mode: str) -> np.ndarray:
        return getattr(self, quantity)[mode].std(axis=0)

    def final_margin_mean(self, mode: str) -> float:
        return float(self.margin[mode][:, -1].mean())

    def median_time_to_zero(self, mode: str) -> float:
        return float(np.median(self.time_to_zero[mode]))


def run_ablation(cfg: ScenarioConfig, seeds, steps: int | None = None) -> AblationSummary:
    """Run every seed with and without the safety constraint."""
    seeds = sorted(int(s) for s in seeds)
    if len(seeds) < 2:
        raise ValueError("ablation needs at least two seeds")
    track, marg, ttz = {}, {}, {}
    n = cfg.run.steps if steps is None else int(steps)
    for mode in AblationSummary.MODES:
        logs = [run_scenario(cfg, seed=s, steps=n, mode=mode) for s in seeds]
        track[mode] = np.array([lg.tracking_errors for lg in logs]).reshape(len(seeds), n)
        marg[mode] = np.array([lg.margins for lg in logs]).reshape(len(seeds), n)
        ttz[mode] = np.array([lg.time_to_zero_margin() for lg in logs])
    return AblationSummary(seeds, n, track, marg, ttz)


@dataclass
class SweepRow:
    delta: float
    tracking_quality: float
    safety_metric: float
    objective: float
    status: str
    positions: np.ndarray


def run_delta_sweep(cfg: ScenarioConfig, deltas, steps: int | None = None) -> list:
    """Controller response to an imposed sensing margin.

    From the configured initial state, with failures disabled and targets
    held at their initial estimates, run ``steps`` (default
    ``run.sweep_steps``) controller steps with the margin fixed to each
    value. The covariance follows the noise-free Kalman recursion. Records
    ``1 / tr P`` and ``tr O_Pi`` at the final positions.
    """
    rt = build_runtime(cfg)
    rt.controller.use_sog = True
    n = cfg.run.sweep_steps if steps is None else int(steps)
    rows = []
    for delta in deltas:
        if delta <= 0:
            raise ValueError("sweep margins must be > 0")
        x = rt.initial_positions.copy()
        prior = predict(rt.initial_estimate, rt.team_A, rt.team_Q)
        mult = None
        for _ in range(n):
            d = ctl.solve_step(x, prior.state, prior.covariance, rt.gamma, rt.library, rt.fields,
                               rt.A_blocks, rt.controller, float(delta), multipliers=mult)
            mult, x = d.multipliers, d.positions
            post = predicted_posterior_cov(x, prior.state, prior.covariance, rt.gamma, rt.library)
            prior = predict(Estimate(prior.state, post), rt.team_A, rt.team_Q)
        nlp = ctl.TrackingNlp(x, prior.state, prior.covariance, rt.gamma, rt.library, rt.fields,
                              rt.A_blocks, rt.controller, float(delta))
        O, _, _ = nlp.sog_blocks(x)
        rows.append(SweepRow(float(delta), 1.0 / float(np.trace(post)),
                             float(np.trace(O, axis1=1, axis2=2).sum()),
                             float(d.objective), d.status, x.copy()))
    return rows

