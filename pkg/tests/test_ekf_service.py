"""
Pruebas del EKF contra soluciones exactas de Riccati
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.linalg import solve_continuous_are

from app.services.ekf_service import EkfService, EkfState
from app.services.model_service import FilteringProblem, ModelService
from app.utils.exceptions import DimensionMismatchError, NumericalBlowUp


def scalar_linear(a=-1.0, r=0.5, P0=2.0):
    signal = ModelService.build_linear(np.array([[a]]), np.array([[r]]))
    return FilteringProblem(signal=signal, sensor=ModelService.fully_observed_sensor(1),
                            x0_mean=np.zeros(1), P0=np.array([[P0]]))


class TestRiccati:
    def test_scalar_matches_closed_form(self):
        problem = scalar_linear()
        dt = 1e-3
        traj = EkfService.run_ekf(problem, np.zeros((2000, 1)), dt)
        exact = EkfService.kalman_bucy_scalar_exact(-1.0, 0.5, 1.0, 2.0, traj.times)
        assert np.max(np.abs(traj.P[:, 0, 0] - exact)) <= 40 * dt

    def test_scalar_steady_state_matches_care(self):
        problem = scalar_linear()
        traj = EkfService.run_ekf(problem, np.zeros((5000, 1)), 1e-3)
        care = solve_continuous_are(np.array([[-1.0]]), np.eye(1), np.array([[0.5]]), np.eye(1))
        assert traj.P[-1, 0, 0] == pytest.approx(care[0, 0], abs=1e-4)

    def test_matrix_steady_state_matches_care(self, linear_problem):
        dt = 1e-3
        traj = EkfService.run_ekf(linear_problem, np.zeros((10000, 2)), dt)
        A = np.array([[-1.0, 0.3], [0.0, -2.0]])
        sensor = linear_problem.sensor
        care = solve_continuous_are(A.T, sensor.B.T, linear_problem.signal.R1, sensor.R2)
        assert_allclose(traj.P[-1], care, atol=1e-6)

    @pytest.mark.parametrize("P0", [0.0, 1.0, 5.0])
    def test_forgets_initial_covariance(self, P0):
        problem = scalar_linear(a=-1.0, r=1.0, P0=P0)
        dt = 1e-3
        traj = EkfService.run_ekf(problem, np.zeros((12000, 1)), dt)
        exact = EkfService.kalman_bucy_scalar_exact(-1.0, 1.0, 1.0, P0, traj.times)
        assert np.max(np.abs(traj.P[:, 0, 0] - exact)) <= 40 * dt
        tail = traj.P[traj.times >= 10.0 - 1e-9, 0, 0]
        assert tail.size > 0
        assert np.max(np.abs(tail - (np.sqrt(2.0) - 1.0))) <= 1e-3

    def test_closed_form_initial_value(self):
        assert EkfService.kalman_bucy_scalar_exact(-1.0, 0.5, 1.0, 2.0, 0.0) == pytest.approx(2.0)

    def test_riccati_drift_with_inflation(self, scalar_problem):
        P = np.array([[0.2]])
        base = EkfService.riccati_drift(P, np.zeros(1), scalar_problem)
        inflated = EkfService.riccati_drift(P, np.zeros(1), scalar_problem, theta=0.5)
        assert_allclose(inflated - base, [[0.25]])
        assert_allclose(base, [[2 * -4.0 * 0.2 + 1.0 - 0.04]])


class TestEkfRun:
    def test_trace_bound_holds(self, scalar_problem):
        obs = ModelService.simulate_observations(scalar_problem, 0.01, 3.0, np.random.default_rng(1))
        traj = EkfService.run_ekf(scalar_problem, obs.dY, obs.dt)
        bound = EkfService.trace_bound(traj.times, 0.1, 1.0, 8.0)
        assert np.all(traj.trace_P <= bound)

    def test_gain_with_inflation(self, linear_problem):
        P = 0.3 * np.eye(2)
        gain = EkfService.gain(P, linear_problem, theta=0.1)
        assert_allclose(gain, 0.4 * np.eye(2) / 0.25)

    def test_covariance_stays_psd(self, cubic_problem):
        obs = ModelService.simulate_observations(cubic_problem, 0.01, 2.0, np.random.default_rng(5))
        traj = EkfService.run_ekf(cubic_problem, obs.dY, obs.dt)
        assert all(np.linalg.eigvalsh(P)[0] >= -1e-12 for P in traj.P)

    def test_initial_state_offsets_times(self, scalar_problem):
        start = EkfState(xhat=np.zeros(1), P=np.array([[0.1]]), t=1.5)
        traj = EkfService.run_ekf(scalar_problem, np.zeros((10, 1)), 0.1, initial=start)
        assert traj.times[0] == 1.5
        assert traj.times[-1] == pytest.approx(2.5)

    def test_csv_rows_layout(self, linear_problem):
        traj = EkfService.run_ekf(linear_problem, np.zeros((3, 2)), 0.1)
        rows = traj.csv_rows()
        assert len(rows) == 4
        assert len(rows[0]) == 1 + 2 + 3 + 1

    def test_observation_dimension_checked(self, linear_problem):
        with pytest.raises(DimensionMismatchError):
            EkfService.run_ekf(linear_problem, np.zeros((5, 3)), 0.1)

    def test_unstable_unobserved_signal_blows_up(self):
        signal = ModelService.build_linear(np.array([[1000.0]]), np.eye(1))
        problem = FilteringProblem(signal=signal, sensor=ModelService.fully_observed_sensor(1, b=0.0),
                                   x0_mean=np.ones(1), P0=np.eye(1))
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(NumericalBlowUp):
                EkfService.run_ekf(problem, np.zeros((500, 1)), 1.0)
