"""Scenario configuration: JSON schema, validation and runtime objects.

Unknown keys are rejected everywhere. Validation errors carry the key path
and, where it can be located, the line in the source file.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .controller import ControllerConfig
from .estimation import Estimate
from .observability import ConfigurationError, minimal_sensor_matrix
from .optimizer import SolverOptions
from .sensing import SensorLibrary, as_sensor_matrix
from .world import ConstantInput, RiskField, ScheduleInput, TargetModel, WaypointFollower

Matrix = List[List[float]]
Vector = List[float]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class SensorSpec(_Strict):
    h: Vector
    w: float = Field(gt=0)
    lam: float = Field(alias="lambda", ge=0)


class TeamSpec(_Strict):
    sensor_library: List[SensorSpec] = Field(min_length=1)
    sensor_matrix: List[List[int]] = Field(min_length=1)
    initial_positions: Matrix


class ConstantControl(_Strict):
    kind: Literal["constant"] = "constant"
    u: Vector


class ScheduleControl(_Strict):
    kind: Literal["schedule"]
    starts: List[int]
    inputs: Matrix


class WaypointControl(_Strict):
    kind: Literal["waypoints"]
    points: Matrix = Field(min_length=1)
    speed: float = Field(ge=0)
    loop: bool = False
    max_gain: Optional[float] = Field(default=2.0, gt=0)


Control = Annotated[Union[ConstantControl, ScheduleControl, WaypointControl], Field(discriminator="kind")]


class RiskFieldSpec(_Strict):
    kind: Literal["gaussian"] = "gaussian"
    c: float = Field(gt=0)
    sigma: Matrix


class TargetSpec(_Strict):
    A: Matrix
    B: Matrix
    Q: Matrix
    initial_state: Vector
    control: Optional[Control] = None
    risk_field: RiskFieldSpec


class SolverSpec(_Strict):
    tol_c: float = Field(default=1e-6, gt=0)
    tol_g: float = Field(default=1e-6, gt=0)
    max_outer: int = Field(default=50, ge=1)
    max_inner: int = Field(default=500, ge=1)
    penalty0: float = Field(default=1.0, gt=0)
    penalty_growth: float = Field(default=10.0, gt=1)
    multiplier_bound: float = Field(default=1e6, gt=0)
    multistart: int = Field(default=0, ge=0)
    gradient: Literal["analytic", "fd"] = "analytic"
    h_fd: float = Field(default=1e-5, gt=0)


class ControllerSpec(_Strict):
    d_m: float = Field(gt=0)
    d_n: float = Field(ge=0)
    rho1: Vector
    rho2: float = Field(gt=0)
    w1: float = Field(gt=0)
    w2: float = Field(gt=0)
    horizon: int = Field(default=10, ge=1)
    delta_floor: float = Field(default=0.05, gt=0)
    solver: SolverSpec = Field(default_factory=SolverSpec)


class KfSpec(_Strict):
    initial_estimate: Vector
    initial_covariance: Matrix


class RunSpec(_Strict):
    steps: int = Field(default=400, ge=0)
    seed: int = 0
    mode: Literal["risk_aware", "no_sog", "delta_sweep"] = "risk_aware"
    sweep_deltas: List[float] = Field(default_factory=list)
    sweep_steps: int = Field(default=1, ge=1)


class OutputSpec(_Strict):
    dir: str = "out"


class ScenarioConfig(_Strict):
    name: str = "scenario"
    description: str = ""
    team: TeamSpec
    targets: List[TargetSpec] = Field(min_length=1)
    controller: ControllerSpec
    kf: KfSpec
    run: RunSpec = Field(default_factory=RunSpec)
    output: OutputSpec = Field(default_factory=OutputSpec)

    @model_validator(mode="after")
    def _check_consistency(self):
        build_runtime(self)
        return self

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json", by_alias=True), indent=2, sort_keys=False)

    def with_run(self, **kwargs) -> "ScenarioConfig":
        data = self.model_dump(mode="json", by_alias=True)
        data["run"].update(kwargs)
        return ScenarioConfig.model_validate(data)


@dataclass
class Runtime:
    """Numerical objects built from a validated configuration."""

    library: SensorLibrary
    gamma: np.ndarray
    initial_positions: np.ndarray
    target_models: list
    initial_targets: np.ndarray
    fields: list
    controller: ControllerConfig
    initial_estimate: Estimate
    minimal_count: int
    minimal_norm: float

    @property
    def n_robots(self) -> int:
        return self.gamma.shape[0]

    @property
    def n_targets(self) -> int:
        return len(self.target_models)

    @property
    def dim(self) -> int:
        return self.library.dim

    @property
    def A_blocks(self) -> list:
        return [m.A for m in self.target_models]

    @property
    def team_A(self) -> np.ndarray:
        from scipy.linalg import block_diag
        return block_diag(*self.A_blocks)

    @property
    def team_Q(self) -> np.ndarray:
        from scipy.linalg import block_diag
        return block_diag(*[m.Q for m in self.target_models])


def _policy(spec):
    if spec is None:
        return None
    if spec.kind == "constant":
        return ConstantInput(np.asarray(spec.u, dtype=float))
    if spec.kind == "schedule":
        return ScheduleInput(tuple(spec.starts), tuple(tuple(u) for u in spec.inputs))
    return WaypointFollower(tuple(tuple(p) for p in spec.points), spec.speed, spec.loop, spec.max_gain)


def build_runtime(cfg: ScenarioConfig) -> Runtime:
    """Construct and cross-check all runtime objects; raises ``ValueError``."""
    team = cfg.team
    try:
        library = SensorLibrary([s.h for s in team.sensor_library],
                                [s.w for s in team.sensor_library],
                                [s.lam for s in team.sensor_library])
    except ValueError as exc:
        raise ValueError(f"team.sensor_library: {exc}") from None
    p = library.dim
    try:
        gamma = as_sensor_matrix(team.sensor_matrix, library.n_types)
    except ValueError as exc:
        raise ValueError(f"team.sensor_matrix: {exc}") from None
    x0 = np.asarray(team.initial_positions, dtype=float)
    N = gamma.shape[0]
    if x0.shape != (N, p):
        raise ValueError(f"team.initial_positions: expected shape ({N}, {p}), got {x0.shape}")

    models, fields, e0 = [], [], []
    for j, t in enumerate(cfg.targets):
        where = f"targets[{j}]"
        try:
            m = TargetModel(t.A, t.B, t.Q, _policy(t.control))
        except ValueError as exc:
            raise ValueError(f"{where}: {exc}") from None
        if m.dim != p:
            raise ValueError(f"{where}.A: state dimension {m.dim} does not match sensor rows ({p})")
        if len(t.initial_state) != p:
            raise ValueError(f"{where}.initial_state: expected {p} entries")
        if t.control is not None:
            q = m.B.shape[1]
            if t.control.kind == "constant" and len(t.control.u) != q:
                raise ValueError(f"{where}.control.u: expected {q} entries")
            if t.control.kind == "schedule" and any(len(u) != q for u in t.control.inputs):
                raise ValueError(f"{where}.control.inputs: expected {q} entries per input")
            if t.control.kind == "waypoints" and (q != p or any(len(pt) != p for pt in t.control.points)):
                raise ValueError(f"{where}.control: waypoint following needs B to be {p}x{p} and {p}-D points")
        try:
            fields.append(RiskField(t.risk_field.c, np.asarray(t.risk_field.sigma)))
        except ValueError as exc:
            raise ValueError(f"{where}.risk_field: {exc}") from None
        if fields[-1].sigma.shape != (p, p):
            raise ValueError(f"{where}.risk_field.sigma: expected {p}x{p}")
        models.append(m)
        e0.append(t.initial_state)
    M = len(models)

    c = cfg.controller
    if len(c.rho1) != M:
        raise ValueError(f"controller.rho1: expected {M} entries, got {len(c.rho1)}")
    s = c.solver
    solver = SolverOptions(tol_c=s.tol_c, tol_g=s.tol_g, max_outer=s.max_outer, max_inner=s.max_inner,
                           penalty0=s.penalty0, penalty_growth=s.penalty_growth,
                           multiplier_bound=s.multiplier_bound, multistart=s.multistart,
                           multistart_radius=c.d_m, gradient=s.gradient, h_fd=s.h_fd)
    ctrl = ControllerConfig(c.d_m, c.d_n, np.asarray(c.rho1), c.rho2, c.w1, c.w2,
                            c.horizon, c.delta_floor, cfg.run.mode != "no_sog", solver)
    for i in range(N):
        for k in range(i + 1, N):
            if np.linalg.norm(x0[i] - x0[k]) < c.d_n:
                raise ValueError(f"team.initial_positions: robots {i} and {k} closer than d_n={c.d_n}")

    est = np.asarray(cfg.kf.initial_estimate, dtype=float)
    P0 = np.asarray(cfg.kf.initial_covariance, dtype=float)
    if est.shape != (M * p,):
        raise ValueError(f"kf.initial_estimate: expected {M * p} entries")
    if P0.shape != (M * p, M * p):
        raise ValueError(f"kf.initial_covariance: expected {M * p}x{M * p}")
    if not np.allclose(P0, P0.T) or np.linalg.eigvalsh(0.5 * (P0 + P0.T)).min() < -1e-10:
        raise ValueError("kf.initial_covariance: must be symmetric positive semidefinite")

    if cfg.run.mode == "delta_sweep" and not cfg.run.sweep_deltas:
        raise ValueError("run.sweep_deltas: required for mode 'delta_sweep'")
    if any(d <= 0 for d in cfg.run.sweep_deltas):
        raise ValueError("run.sweep_deltas: values must be > 0")

    counts = [minimal_sensor_matrix(library, m.A, c.horizon, max_per_type=N) for m in models]
    count, norm = max(counts)
    return Runtime(library, gamma, x0, models, np.asarray(e0, dtype=float).ravel(), fields,
                   ctrl, Estimate(est, P0), count, norm)


# -- loading ---------------------------------------------------------------------

def _locate(text: str, loc) -> Optional[int]:
    keys = [k for k in loc if isinstance(k, str)]
    if not keys:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(keys[-1]), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def resolve_config_path(path) -> Path:
    """Return ``path`` if it exists, otherwise look among the bundled scenarios."""
    p = Path(path)
    if p.exists():
        return p
    bundled = resources.files("riskaware_tracking") / "scenarios" / p.name
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigurationError(f"{path}: no such configuration file")


def loads_config(text: str, source: str = "<string>") -> ScenarioConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            key = ".".join(str(k) for k in err["loc"]) or "<root>"
            line = _locate(text, err["loc"])
            where = f"{source}:{line}" if line else source
            lines.append(f"{where}: {key}: {err['msg']}")
        raise ConfigurationError("\n".join(lines)) from None
    except ConfigurationError as exc:
        raise ConfigurationError(f"{source}: {exc}") from None


def load_config(path) -> ScenarioConfig:
    p = resolve_config_path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"{p}: {exc.strerror}") from None
    return loads_config(text, str(p))
