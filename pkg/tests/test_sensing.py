import math
import warnings

import numpy as np
import pytest

from riskaware_tracking.sensing import (SensorLibrary, apply_failures, as_sensor_matrix,
                                        build_measurement_model, noise_covariance, noise_precision,
                                        sensor_indices, team_noise_covariance, team_noise_variances,
                                        team_row_index)

SVB_GAMMA = [[1, 1, 1], [1, 1, 1], [0, 0, 1], [1, 1, 0]]


def test_library_validation():
    with pytest.raises(ValueError):
        SensorLibrary([[1, 0]], [0.0], [0.1])
    with pytest.raises(ValueError):
        SensorLibrary([[1, 0]], [1.0], [-0.1])
    with pytest.raises(ValueError):
        SensorLibrary([[1, 0], [0, 1]], [1.0], [0.1, 0.1])


def test_sensor_matrix_must_be_binary():
    with pytest.raises(ValueError):
        as_sensor_matrix([[1, 2]])
    with pytest.raises(ValueError):
        as_sensor_matrix([[1, 0]], n_types=3)


def test_sensor_indices_fourth_robot_scenario_b():
    # third robot (index 2) carries only the diagonal sensor
    assert sensor_indices(SVB_GAMMA, 2) == [2]
    assert sensor_indices(SVB_GAMMA, 3) == [0, 1]
    with pytest.raises(IndexError):
        sensor_indices(SVB_GAMMA, 4)


def test_precision_at_zero_distance(library):
    prec = noise_precision([0, 0], [0, 0], [0], library)
    assert prec[0] == pytest.approx(1.8)
    assert noise_covariance([0, 0], [0, 0], [0], library)[0, 0] == pytest.approx(1 / 1.8, rel=1e-12)


def test_precision_decays_with_distance(library):
    # distance 5 -> 1.8 * exp(-0.5)
    prec = noise_precision([3, 4], [0, 0], [0, 1, 2], library)
    np.testing.assert_allclose(prec, 1.8 * math.exp(-0.5), rtol=1e-14)


def test_team_matrix_matches_explicit_stack(library):
    gamma = [[1, 0, 1], [0, 1, 0]]
    model = build_measurement_model(gamma, library, n_targets=2)
    h1, h2, h3 = np.array([1.0, 0]), np.array([0, 1.0]), np.array([1.0, 1])
    z = np.zeros(2)
    expected = np.array([
        np.r_[h1, z], np.r_[h3, z], np.r_[z, h1], np.r_[z, h3],   # robot 0, targets 0 then 1
        np.r_[h2, z], np.r_[z, h2],                               # robot 1
    ])
    np.testing.assert_array_equal(model.team_matrix, expected)
    np.testing.assert_array_equal(team_row_index(gamma, 2)[:, 0], [0, 0, 0, 0, 1, 1])


def test_robot_without_sensors_contributes_no_rows(library):
    model = build_measurement_model([[0, 0, 0], [1, 0, 0]], library, 1)
    assert model.n_rows == 1
    empty = build_measurement_model([[0, 0, 0]], library, 2)
    assert empty.team_matrix.shape == (0, 4)


def test_team_noise_aligned_with_rows(library):
    gamma = [[1, 0, 1], [0, 1, 0]]
    x = np.array([[0.0, 0.0], [0.0, 4.0]])
    e = np.array([[3.0, 0.0], [0.0, 0.0]])
    var = team_noise_variances(x, e, gamma, library)
    d = {(0, 0): 3.0, (0, 1): 0.0, (1, 0): 5.0, (1, 1): 4.0}
    expected = [math.exp(0.1 * d[i, j]) / 1.8 for i, j, _ in team_row_index(gamma, 2)]
    np.testing.assert_allclose(var, expected, rtol=1e-14)
    np.testing.assert_allclose(np.diag(team_noise_covariance(x, e, gamma, library)), var)


def test_failures_zero_entries_and_report_repeats():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        new, ignored = apply_failures(SVB_GAMMA, [(0, 1), (2, 2)])
    assert ignored == []
    assert new.sum() == 7 and new[0, 1] == 0 and new[2].sum() == 0
    with pytest.warns(UserWarning):
        _, ignored = apply_failures(new, [(0, 1), (1, 0), (1, 0)])
    assert ignored == [(0, 1), (1, 0)]


def test_full_suite_indices_zero_based():
    assert sensor_indices(np.ones((2, 3)), 1) == [0, 1, 2]
    assert sensor_indices([[0, 0, 0]], 0) == []


def test_per_robot_blocks(library):
    model = build_measurement_model([[1, 1, 1], [0, 0, 1]], library, 1)
    np.testing.assert_array_equal(model.per_robot_blocks[0], [[1, 0], [0, 1], [1, 1]])
    np.testing.assert_array_equal(model.per_robot_blocks[1], [[1, 1]])


def test_two_by_two_single_sensor_team_matrix(library):
    model = build_measurement_model([[1, 0, 0], [1, 0, 0]], library, 2)
    Hi = np.kron(np.eye(2), [[1.0, 0.0]])
    np.testing.assert_array_equal(model.team_matrix, np.vstack([Hi, Hi]))


def test_no_decay_means_constant_noise():
    lib = SensorLibrary([[1, 0]], [2.0], [0.0])
    assert noise_covariance([100, 0], [0, 0], [0], lib)[0, 0] == pytest.approx(0.5)


def test_team_covariance_shapes(library):
    R1 = team_noise_covariance([[0, 0]], [[1, 1]], [[1, 0, 0]], library)
    np.testing.assert_allclose(R1, noise_covariance([0, 0], [1, 1], [0], library))
    R = team_noise_covariance(np.zeros((2, 2)), np.ones((2, 2)), np.ones((2, 3)), library)
    assert R.shape == (12, 12)
    assert np.count_nonzero(R - np.diag(np.diag(R))) == 0


def test_single_failure_norm():
    new, _ = apply_failures(np.ones((2, 3)), [(1, 2)])
    assert new[1, 2] == 0
    assert math.sqrt(new.sum()) == pytest.approx(math.sqrt(5))
    same, _ = apply_failures(np.ones((2, 3)), [])
    np.testing.assert_array_equal(same, np.ones((2, 3)))
    with pytest.warns(UserWarning):
        dup, _ = apply_failures(np.ones((2, 3)), [(1, 2), (1, 2)])
    np.testing.assert_array_equal(dup, new)
