import json
import math

import numpy as np
import pytest

from riskaware_tracking.config import ScenarioConfig, build_runtime
from riskaware_tracking.estimation import Estimate, predict, update
from riskaware_tracking.sensing import build_measurement_model, team_noise_variances
from riskaware_tracking.simulation import Simulation, run_ablation, run_delta_sweep, run_scenario

from conftest import scenario_dict, small_config

# a target sitting on a peak-one risk field: any robot on top of it is detected surely
DEADLY = {"c": 2 * math.pi, "sigma": [[1, 0], [0, 1]]}


def test_zero_steps():
    log = run_scenario(small_config(), steps=0)
    assert len(log) == 0
    assert log.time_to_zero_margin() == 0
    assert not log.degraded


def test_same_seed_same_run():
    a = run_scenario(small_config(), seed=3)
    b = run_scenario(small_config(), seed=3)
    for ra, rb in zip(a.records, b.records):
        np.testing.assert_array_equal(ra.robot_positions, rb.robot_positions)
        np.testing.assert_array_equal(ra.estimate, rb.estimate)


def test_covariance_matches_replayed_filter():
    """Re-run the filter from the logged positions and compare covariances."""
    cfg = small_config(run={"steps": 8})
    log = run_scenario(cfg, failures=False)
    rt = build_runtime(cfg)
    prior = rt.initial_estimate
    H = build_measurement_model(rt.gamma, rt.library, 1).team_matrix
    positions = [rt.initial_positions] + [r.robot_positions for r in log.records]
    for t, rec in enumerate(log.records):
        r = team_noise_variances(positions[t], prior.state, rt.gamma, rt.library)
        post = update(prior, H @ rec.true_targets, H, r)   # covariance does not depend on y
        assert np.trace(post.covariance) == pytest.approx(rec.trace_cov[0], rel=1e-10)
        prior = predict(Estimate(rec.estimate, post.covariance), rt.team_A, rt.team_Q)


def test_static_target_covariance_nonincreasing():
    log = run_scenario(small_config(run={"steps": 15}), failures=False)
    tr = log.tracking_errors
    assert np.all(np.diff(tr) <= 1e-12)


def test_margin_bookkeeping(sva):
    log = run_scenario(sva, seed=1, steps=60, mode="no_sog")
    prev = build_runtime(sva).gamma
    for rec in log.records:
        assert rec.margin == pytest.approx(math.sqrt(rec.gamma.sum()) - math.sqrt(2), abs=1e-15)
        assert prev.sum() - rec.gamma.sum() == len(rec.failures)
        for i, l in rec.failures:
            assert prev[i, l] == 1 and rec.gamma[i, l] == 0
        prev = rec.gamma


def test_motion_limits_every_step(svb):
    log = run_scenario(svb, seed=0, steps=25)
    x_prev = build_runtime(svb).initial_positions
    for rec in log.records:
        x = rec.robot_positions
        assert np.all(np.linalg.norm(x - x_prev, axis=1) <= 0.33 + 1e-6)
        d = np.linalg.norm(x[:, None] - x[None], axis=2) + 10 * np.eye(4)
        assert d.min() >= 2.0 - 1e-6
        assert rec.delta1.min() >= 0 and rec.delta2 >= 0
        x_prev = x


def test_failures_disabled_keeps_margin(sva):
    log = run_scenario(sva, seed=0, steps=20, failures=False)
    assert np.all(log.margins == log.margins[0])


def test_observability_lost_on_deadly_target():
    cfg = small_config(run={"steps": 6, "mode": "no_sog"})
    d = json.loads(cfg.to_json())
    d["targets"][0]["risk_field"] = DEADLY
    d["team"]["initial_positions"] = [[3.0, 0.0]]
    log = run_scenario(ScenarioConfig.model_validate(d))
    assert log.records[0].failures
    assert log.degraded
    assert log.time_to_zero_margin() < 6


def test_simulation_step_interface():
    sim = Simulation(small_config())
    r0 = sim.step()
    r1 = sim.step()
    assert (r0.step, r1.step) == (0, 1)
    assert sim.world.time_step == 1   # targets do not move on the first iteration


def test_ablation_shapes():
    summary = run_ablation(small_config(), seeds=[0, 1], steps=3)
    for mode in summary.MODES:
        assert summary.margin[mode].shape == (2, 3)
        assert summary.time_to_zero[mode].shape == (2,)
    with pytest.raises(ValueError):
        run_ablation(small_config(), seeds=[0])


def test_sweep_rows_follow_deltas(svb):
    rows = run_delta_sweep(svb, [0.5, 1.5])
    assert [r.delta for r in rows] == [0.5, 1.5]
    for r in rows:
        assert r.tracking_quality > 0 and r.safety_metric > 0
    with pytest.raises(ValueError):
        run_delta_sweep(svb, [0.0])


def test_sweep_trades_safety_for_quality():
    """With a reduced team both slacks can be active together; a larger margin buys quality."""
    d = scenario_dict("svA.json")
    d["team"]["sensor_matrix"] = [[1, 1, 1], [0, 0, 1]]
    d["team"]["initial_positions"] = [[6.0, 0.0], [6.0, 10.0]]
    rows = run_delta_sweep(ScenarioConfig.model_validate(d), [0.2, 1.0, 1.8], steps=1)
    q = [r.tracking_quality for r in rows]
    s = [r.safety_metric for r in rows]
    assert q[0] < q[1] < q[2]
    assert s[0] > s[1] > s[2]


def test_zero_risk_modes_agree_on_margin():
    # no detections can happen, so both modes keep the full team
    harmless = {"c": 1e-300, "sigma": [[2, 0], [0, 2]]}
    t = dict(scenario_dict("svA.json")["targets"][0], risk_field=harmless)
    cfg = small_config(targets=[dict(t, initial_state=[3.0, 0.0])], run={"steps": 20})
    summary = run_ablation(cfg, seeds=[0, 1], steps=20)
    np.testing.assert_array_equal(summary.margin["risk_aware"], summary.margin["no_sog"])
    np.testing.assert_array_equal(summary.time_to_zero["risk_aware"], [20, 20])


def test_single_delta_sweep(svb):
    assert len(run_delta_sweep(svb, [1.0])) == 1


def test_repeated_delta_gives_identical_rows(svb):
    a, b = run_delta_sweep(svb, [0.6, 0.6])
    assert (a.tracking_quality, a.safety_metric, a.objective) == (b.tracking_quality, b.safety_metric, b.objective)
    np.testing.assert_array_equal(a.positions, b.positions)
