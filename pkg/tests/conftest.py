import json

import numpy as np
import pytest

from riskaware_tracking.config import ScenarioConfig, load_config
from riskaware_tracking.sensing import SensorLibrary

# sensor rows and noise parameters used throughout the shipped scenarios
ROWS = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]


@pytest.fixture
def library():
    return SensorLibrary(ROWS, [1.8] * 3, [0.1] * 3)


@pytest.fixture(scope="session")
def sva():
    return load_config("svA.json")


@pytest.fixture(scope="session")
def svb():
    return load_config("svB.json")


def scenario_dict(name="svA.json"):
    return json.loads(load_config(name).to_json())


def small_config(**overrides):
    """One robot, one static target, tiny and quick; ``overrides`` patch top-level sections."""
    d = {
        "name": "tiny",
        "team": {
            "sensor_library": [{"h": r, "w": 1.8, "lambda": 0.1} for r in ROWS],
            "sensor_matrix": [[1, 1, 1]],
            "initial_positions": [[0.0, 0.0]],
        },
        "targets": [{
            "A": [[1, 0], [0, 1]], "B": [[1, 0], [0, 1]], "Q": [[0, 0], [0, 0]],
            "initial_state": [3.0, 0.0],
            "risk_field": {"c": 3.0, "sigma": [[2, 0], [0, 2]]},
        }],
        "controller": {"d_m": 0.33, "d_n": 2.0, "rho1": [0.5], "rho2": 0.1, "w1": 1, "w2": 100,
                       "horizon": 1},
        "kf": {"initial_estimate": [3.0, 0.0], "initial_covariance": [[2, 0], [0, 2]]},
        "run": {"steps": 5, "seed": 0},
    }
    for key, val in overrides.items():
        if isinstance(val, dict) and isinstance(d.get(key), dict):
            d[key].update(val)
        else:
            d[key] = val
    return ScenarioConfig.model_validate(d)


def random_spd(rng, n, lo=0.1):
    A = rng.standard_normal((n, n))
    return A @ A.T + lo * np.eye(n)
