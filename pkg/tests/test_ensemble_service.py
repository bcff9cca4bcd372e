"""
Pruebas del sistema de partículas En-EKF
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.services.ekf_service import EkfState
from app.services.ensemble_service import EnsembleService, EnsembleState
from app.services.model_service import FilteringProblem, ModelService, SensorModel
from app.utils.exceptions import ModelValidationError, TimeMismatchError
from app.utils.rng import StreamFactory


def unstable_problem():
    signal = ModelService.build_linear(np.array([[50.0]]), np.eye(1))
    return FilteringProblem(signal=signal, sensor=ModelService.fully_observed_sensor(1, b=0.0),
                            x0_mean=np.zeros(1), P0=np.eye(1))


def ou_problem():
    """OU escalar A(x) = -x, σ1 = 1"""
    signal = ModelService.build_linear(-np.eye(1), np.eye(1))
    return FilteringProblem(signal=signal, sensor=ModelService.fully_observed_sensor(1),
                            x0_mean=np.array([1.0]), P0=np.array([[0.5]]))


def single_particle_gaps(reps, dt=0.1, T=5.0, seed=31):
    """m_T - X_T para N = 1 en corridas independientes"""
    problem = ou_problem()
    factory = StreamFactory(seed)
    gaps = np.empty(reps)
    for i in range(reps):
        streams = factory.for_run(i)
        obs = ModelService.simulate_observations(problem, dt, T, streams.generator("truth"))
        run = EnsembleService.run_enkf(problem, obs, 1, streams, paired_ekf=False)
        assert not run.blow_up
        assert np.array_equal(run.p, np.zeros_like(run.p))
        gaps[i] = run.m[-1, 0] - obs.truth[-1, 0]
    return gaps


def euler_ou_variance(dt, T, P0=0.5):
    """Varianza de X_k para X_{k+1} = (1 - dt)X_k + ΔW_k"""
    a = (1.0 - dt) ** 2
    k = int(round(T / dt))
    return a ** k * P0 + dt * (1.0 - a ** k) / (1.0 - a)


class TestEnsembleState:
    def test_single_particle_has_zero_covariance(self):
        state = EnsembleState.from_particles(np.array([[1.0, 2.0]]))
        assert state.N == 1
        assert np.array_equal(state.p, np.zeros((2, 2)))
        assert np.array_equal(state.m, np.array([1.0, 2.0]))

    def test_init_requires_particles(self, scalar_problem, rng):
        with pytest.raises(ModelValidationError):
            EnsembleService.init_ensemble(scalar_problem, 0, rng)

    def test_xi_error_requires_same_time(self, scalar_problem, rng):
        state = EnsembleService.init_ensemble(scalar_problem, 5, rng)
        with pytest.raises(TimeMismatchError):
            EnsembleService.xi_error(state, EkfState(xhat=np.zeros(1), P=np.eye(1), t=1.0))

    def test_xi_error_value(self):
        state = EnsembleState.from_particles(np.array([[1.0], [3.0]]))
        ekf = EkfState(xhat=np.array([1.0]), P=np.array([[1.0]]), t=0.0)
        assert EnsembleService.xi_error(state, ekf).value == pytest.approx(1.0 + 1.0)


class TestEnkfStep:
    def test_negative_inflation_rejected(self, scalar_problem, rng):
        state = EnsembleService.init_ensemble(scalar_problem, 4, rng)
        with pytest.raises(ModelValidationError):
            EnsembleService.enkf_step(state, np.zeros(1), 0.01, np.zeros((4, 1)), np.zeros((4, 1)),
                                      scalar_problem, theta=-1.0)

    def test_noiseless_drift_only_increments(self, rng):
        A = np.array([[-1.0, 0.2], [0.0, -0.5]])
        signal = ModelService.build_linear(A, np.zeros((2, 2)))
        problem = FilteringProblem(signal=signal, sensor=SensorModel(B=np.zeros((2, 2)), R2=np.eye(2)),
                                   x0_mean=np.zeros(2), P0=np.eye(2))
        N, dt = 16, 1e-3
        pre = EnsembleService.init_ensemble(problem, N, rng)
        zeros = np.zeros((N, 2))
        post = EnsembleService.enkf_step(pre, np.zeros(2), dt, zeros, zeros, problem)
        dMbar, dM = EnsembleService.fluctuation_increments(pre, post, np.zeros(2), dt, problem)
        assert_allclose(dMbar, 0.0, atol=1e-12)
        scale = np.sqrt(N) * np.linalg.norm(A, 2) ** 2 * np.linalg.norm(pre.p, 2) * dt ** 2
        assert np.max(np.abs(dM)) <= 10 * scale + 1e-12

    def test_inflated_mean_increment_vanishes_without_noise(self, linear_problem, rng):
        N, dt, theta = 10, 1e-3, 0.5
        pre = EnsembleService.init_ensemble(linear_problem, N, rng)
        zeros = np.zeros((N, 2))
        post = EnsembleService.enkf_step(pre, np.zeros(2), dt, zeros, zeros, linear_problem, theta)
        dMbar, _ = EnsembleService.fluctuation_increments(pre, post, np.zeros(2), dt,
                                                          linear_problem, theta)
        assert_allclose(dMbar, 0.0, atol=1e-12)
        uninflated, _ = EnsembleService.fluctuation_increments(pre, post, np.zeros(2), dt, linear_problem)
        assert np.max(np.abs(uninflated)) > 1e-6

    def test_single_particle_has_no_covariance_fluctuation(self, scalar_problem, rng):
        pre = EnsembleService.init_ensemble(scalar_problem, 1, rng)
        noise = rng.standard_normal((1, 1)) * 0.1
        post = EnsembleService.enkf_step(pre, np.zeros(1), 0.01, noise, noise, scalar_problem)
        _, dM = EnsembleService.fluctuation_increments(pre, post, np.zeros(1), 0.01, scalar_problem)
        assert np.array_equal(dM, np.zeros((1, 1)))


class TestRunEnkf:
    def test_run_shapes_and_psd(self, scalar_problem, streams):
        obs = ModelService.simulate_observations(scalar_problem, 0.01, 1.0, streams.generator("truth"))
        run = EnsembleService.run_enkf(scalar_problem, obs, 20, streams)
        assert not run.blow_up
        assert run.m.shape == (101, 1)
        assert np.all(run.lambda_min_p >= -1e-12)
        assert np.all(np.isfinite(run.xi))
        assert run.xi[0] >= 0.0

    def test_exchangeability_is_bit_exact(self, linear_problem, streams):
        obs = ModelService.simulate_observations(linear_problem, 0.01, 0.5, streams.generator("truth"))
        perm = np.random.default_rng(3).permutation(12)
        base = EnsembleService.run_enkf(linear_problem, obs, 12, streams)
        permuted = EnsembleService.run_enkf(linear_problem, obs, 12, streams, permutation=perm)
        assert np.array_equal(base.m, permuted.m)
        assert np.array_equal(base.p, permuted.p)

    def test_zeta_system_starts_on_ensemble(self, scalar_problem, streams):
        obs = ModelService.simulate_observations(scalar_problem, 0.01, 0.5, streams.generator("truth"))
        run = EnsembleService.run_enkf(scalar_problem, obs, 10, streams, zeta=True)
        assert run.particle_gap[0] == 0.0
        assert np.all(np.isfinite(run.particle_gap))

    def test_same_streams_same_run(self, scalar_problem, streams):
        obs = ModelService.simulate_observations(scalar_problem, 0.01, 0.5, streams.generator("truth"))
        a = EnsembleService.run_enkf(scalar_problem, obs, 8, streams.for_run(8))
        b = EnsembleService.run_enkf(scalar_problem, obs, 8, streams.for_run(8))
        assert np.array_equal(a.m, b.m)

    def test_single_particle_is_an_independent_copy(self):
        gaps = single_particle_gaps(300)
        sq = gaps ** 2
        se = sq.std(ddof=1) / np.sqrt(sq.size)
        assert abs(sq.mean() - 2.0 * euler_ou_variance(0.1, 5.0)) <= 4.0 * se

    @pytest.mark.slow
    def test_single_particle_copy_at_scale(self):
        gaps = single_particle_gaps(10_000)
        sq = gaps ** 2
        se = sq.std(ddof=1) / np.sqrt(sq.size)
        assert abs(sq.mean() - 2.0 * euler_ou_variance(0.1, 5.0)) <= 3.0 * se

    def test_fewer_particles_than_dimensions_is_rank_deficient(self, streams):
        A = np.array([[-1.0, 0.2, 0.0], [0.0, -1.5, 0.1], [0.0, 0.0, -2.0]])
        signal = ModelService.build_linear(A, 0.25 * np.eye(3))
        problem = FilteringProblem(signal=signal, sensor=ModelService.fully_observed_sensor(3),
                                   x0_mean=np.zeros(3), P0=0.2 * np.eye(3))
        obs = ModelService.simulate_observations(problem, 0.01, 0.5, streams.generator("truth"))
        run = EnsembleService.run_enkf(problem, obs, 2, streams, paired_ekf=False)
        assert not run.blow_up
        for p, lam in zip(run.p, run.lambda_min_p):
            eigs = np.linalg.eigvalsh(p)
            scale = max(1.0, float(np.trace(p)))
            assert abs(lam) <= 1e-10 * scale
            assert eigs[0] >= -1e-12 * scale
            assert abs(eigs[1]) <= 1e-10 * scale
            assert eigs[2] > 0.0

    def test_blow_up_is_detected(self, streams):
        problem = unstable_problem()
        with np.errstate(over="ignore", invalid="ignore"):
            obs = ModelService.simulate_observations(problem, 0.1, 100.0, streams.generator("truth"))
        run = EnsembleService.run_enkf(problem, obs, 5, streams, paired_ekf=False)
        assert run.blow_up
        assert run.blow_up_time is not None
        assert np.all(np.isfinite(run.m))


class TestDivergenceProbe:
    def test_unstable_model_diverges(self, streams):
        problem = unstable_problem()
        with np.errstate(over="ignore", invalid="ignore"):
            obs = ModelService.simulate_observations(problem, 0.1, 100.0, streams.generator("truth"))
        report = EnsembleService.divergence_probe(problem, obs, 5, streams)
        assert report.blow_up
        assert report.growth_rate > 0

    def test_stable_model_stays_bounded(self, scalar_problem, streams):
        obs = ModelService.simulate_observations(scalar_problem, 0.01, 1.0, streams.generator("truth"))
        report = EnsembleService.divergence_probe(scalar_problem, obs, 1, streams)
        assert not report.blow_up
        assert report.notes == []
        assert report.horizon == pytest.approx(1.0)
