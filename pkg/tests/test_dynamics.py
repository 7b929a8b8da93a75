import numpy as np
import pytest

from qbath.bath_models import SystemSpec, ThermalParams, build_bath, load_preset, thermal_state
from qbath.correlations import RECONSTRUCTED, CorrelationTensor, correlations_up_to
from qbath.dynamics import (
    DephasingPrediction, GridMoments, bloch_components, compare, cumulant_predicted_dephasing,
    exact_reduced_dynamics, predict_dephasing, predict_from_tensor, series_reduced_state, simplex_integral,
    simplex_integral_matrix,
)
from qbath.errors import ConfigValidationError, GridMismatchError, GridTooCoarseError
from qbath.operators import bloch_state

PLUS_X = bloch_state((1.0, 0.0, 0.0))


def exact_bloch(bath, rho, times):
    return bloch_components(exact_reduced_dynamics(PLUS_X, SystemSpec(), bath, rho, times))


def deviation(bath, rho, prediction):
    return compare(exact_reduced_dynamics(PLUS_X, SystemSpec(), bath, rho, prediction.times), prediction).deviation


def test_simplex_integral_of_constants():
    times = np.linspace(0.0, 2.0, 9)
    assert np.allclose(simplex_integral(np.ones(9), times), times)
    assert np.allclose(simplex_integral(np.ones((9, 9)), times), times ** 2 / 2)
    fine = np.linspace(0.0, 1.0, 101)
    assert np.allclose(simplex_integral(np.ones((101,) * 3), fine), fine ** 3 / 6, atol=2e-5)


def test_simplex_integral_matrix_of_constants():
    times = np.linspace(0.0, 1.0, 5)
    out = simplex_integral_matrix(np.ones((5, 5, 2, 2)), times)
    assert out.shape == (5, 2, 2)
    assert np.allclose(out[:, 0, 0], times ** 2 / 2)


def test_static_noise_gives_gaussian_decay():
    times = np.linspace(0.0, 2.0, 11)
    c0 = 0.8
    moments = GridMoments(times, [np.zeros(11), c0 * np.ones((11, 11))])
    prediction = cumulant_predicted_dephasing(moments, 2)
    assert np.allclose(prediction.sigma_x, np.exp(-c0 * times ** 2 / 2))
    assert np.allclose(prediction.sigma_y, 0.0)


def test_zero_coupling_has_no_dephasing(zero_bath):
    bath, rho = zero_bath
    prediction = predict_dephasing(bath, rho, 1.0, 2, initial_points=5)
    assert np.allclose(prediction.sigma_x, 1.0)
    assert np.allclose(deviation(bath, rho, prediction), 0.0, atol=1e-12)


def test_prediction_equal_to_exact_has_zero_deviation(p1):
    bath, rho = p1
    times = np.linspace(0.0, 1.0, 6)
    bloch = exact_bloch(bath, rho, times)
    c = bloch[:, 0] - 1j * bloch[:, 1]
    prediction = DephasingPrediction(2, times, bloch[:, 0], bloch[:, 1], c)
    comparison = compare(exact_reduced_dynamics(PLUS_X, SystemSpec(), bath, rho, times), prediction)
    assert comparison.max_deviation == 0.0
    assert comparison.integrated_deviation == 0.0


def test_p1_second_order_matches_at_short_times():
    bath = build_bath(load_preset("P1"))
    rho = thermal_state(bath.hamiltonian, ThermalParams(0.0))
    prediction = predict_dephasing(bath, rho, 0.1, 2, initial_points=11)
    exact = exact_bloch(bath, rho, prediction.times)
    exact_c = exact[:, 0] - 1j * exact[:, 1]
    assert np.max(np.abs(prediction.coherence - exact_c) / np.abs(exact_c)) <= 1e-3


def test_p1_thermal_tensor_prediction_within_tolerance(p1):
    bath, rho = p1
    times = np.linspace(0.0, 0.1, 11)
    tensor = correlations_up_to(bath, rho, 2, times, axes=("z",), include_null_signs=False)
    prediction = predict_from_tensor(tensor, times, 2)
    assert np.max(deviation(bath, rho, prediction)) <= 1e-3


def test_short_time_error_is_fourth_order():
    bath = build_bath(load_preset("P1"))
    rho = thermal_state(bath.hamiltonian, ThermalParams(0.0))
    times = np.linspace(0.0, 0.05, 101)
    moments = GridMoments.from_bath(bath, rho, times, 2)
    prediction = cumulant_predicted_dephasing(moments, 2, check_quadrature=False)
    dev = deviation(bath, rho, prediction)
    window = times >= 0.01
    slope = np.polyfit(np.log(times[window]), np.log(dev[window]), 1)[0]
    assert slope >= 3.5


def test_fourth_order_improves_on_second(p3):
    bath, rho = p3
    times = np.linspace(0.0, 0.2, 41)
    moments = GridMoments.from_bath(bath, rho, times, 4)
    k2 = cumulant_predicted_dephasing(moments, 2, check_quadrature=False)
    k4 = cumulant_predicted_dephasing(moments, 4, check_quadrature=False)
    assert np.all(deviation(bath, rho, k4) <= deviation(bath, rho, k2) + 1e-8)


def test_odd_orders_are_opt_in(p1_tilted):
    bath, rho = p1_tilted
    times = np.linspace(0.0, 0.5, 11)
    moments = GridMoments.from_bath(bath, rho, times, 2)
    even = cumulant_predicted_dephasing(moments, 2, check_quadrature=False)
    full = cumulant_predicted_dephasing(moments, 2, include_odd_orders=True, check_quadrature=False)
    assert not np.allclose(even.sigma_y, full.sigma_y)
    assert np.max(deviation(bath, rho, full)) < np.max(deviation(bath, rho, even))


@pytest.mark.parametrize("K", [0, 3])
def test_bad_truncation_order(p1, K):
    bath, rho = p1
    with pytest.raises(ConfigValidationError, match="even integer"):
        predict_dephasing(bath, rho, 1.0, K)


def test_coarse_grid_detected(p3):
    bath, rho = p3
    moments = GridMoments.from_bath(bath, rho, np.linspace(0.0, 8.0, 5), 2)
    with pytest.raises(GridTooCoarseError):
        cumulant_predicted_dephasing(moments, 2, tolerance=1e-9)
    with pytest.raises(GridTooCoarseError):
        predict_dephasing(bath, rho, 8.0, 2, initial_points=5, tolerance=1e-12, max_refinements=1)


def test_grid_must_be_uniform_from_zero():
    with pytest.raises(GridMismatchError):
        GridMoments([0.0, 0.1, 0.3], [np.zeros(3)])
    with pytest.raises(GridMismatchError):
        GridMoments([0.1, 0.2, 0.3], [np.zeros(3)])


def test_compare_rejects_mismatched_grids(p1):
    bath, rho = p1
    prediction = predict_dephasing(bath, rho, 0.5, 2, initial_points=5)
    exact = exact_reduced_dynamics(PLUS_X, SystemSpec(), bath, rho, [0.0, 0.5])
    with pytest.raises(GridMismatchError):
        compare(exact, prediction)


def test_tensor_prediction_agrees_with_bath_prediction(p1):
    bath, rho = p1
    times = np.linspace(0.0, 1.0, 21)
    tensor = correlations_up_to(bath, rho, 2, times, axes=("z",), include_null_signs=False)
    from_tensor = predict_from_tensor(tensor, times, 2, check_quadrature=False)
    direct = cumulant_predicted_dephasing(GridMoments.from_bath(bath, rho, times, 2), 2, check_quadrature=False)
    assert np.allclose(from_tensor.coherence, direct.coherence, atol=1e-3)
    assert from_tensor.stderr_band is None


def test_tensor_stderr_gives_a_band(p1):
    bath, rho = p1
    times = np.linspace(0.0, 0.5, 3)
    exact = correlations_up_to(bath, rho, 2, times, axes=("z",), include_null_signs=False)
    noisy = CorrelationTensor()
    for idx, entry in exact.items():
        noisy.set(idx, entry.value, RECONSTRUCTED, 0.01)
    prediction = predict_from_tensor(noisy, times, 2)
    assert prediction.stderr_band[0] == 0.0
    assert np.all(prediction.stderr_band[1:] > 0)


def test_missing_tensor_entries(p1):
    with pytest.raises(KeyError):
        predict_from_tensor(CorrelationTensor(), np.linspace(0.0, 1.0, 3), 2)


def test_comparison_csv(tmp_path, p1):
    bath, rho = p1
    prediction = predict_dephasing(bath, rho, 0.5, 2, initial_points=5)
    comparison = compare(exact_reduced_dynamics(PLUS_X, SystemSpec(), bath, rho, prediction.times), prediction)
    comparison.to_csv(tmp_path / "dyn.csv")
    lines = (tmp_path / "dyn.csv").read_text().splitlines()
    assert lines[0] == "t,exact_x,exact_y,pred_x,pred_y,deviation"
    assert len(lines) == len(prediction.times) + 1


def test_series_state_tracks_exact_state_at_short_times(p2):
    bath, rho = p2
    times = np.linspace(0.0, 0.05, 11)
    series = bloch_components(series_reduced_state(PLUS_X, SystemSpec(), bath, rho, times))
    assert np.allclose(series, exact_bloch(bath, rho, times), atol=1e-3)
