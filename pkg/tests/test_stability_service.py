"""
Pruebas del calculador de estabilidad
"""
import math

import numpy as np
import pytest

from app.services.model_service import FilteringProblem, ModelService, SensorModel
from app.services.stability_service import StabilityService
from app.utils.exceptions import ConditionNotApplicableError, ModelValidationError, ParameterError
from tests.conftest import quadratic_problem


class TestReport:
    def test_quadratic_example_values(self):
        report = StabilityService.compute_report(quadratic_problem(Q1=4.0))
        assert report.lambda_S == pytest.approx(8.0, rel=1e-12)
        assert report.lambda_R == pytest.approx(8.0, rel=1e-12)
        assert math.isinf(report.lambda_K)
        assert report.cond_S
        assert report.certified
        assert report.model_dump(mode="json")["lambda_K"] == "inf"

    def test_confidence_radius_identity(self):
        for Q1, sigma1 in [(4.0, 1.0), (10.0, 0.5), (25.0, 2.0)]:
            report = StabilityService.compute_report(quadratic_problem(Q1=Q1, sigma1=sigma1))
            assert report.confidence_radius == pytest.approx(report.confidence_radius_expanded, rel=1e-12)

    def test_literal_formulas(self):
        report = StabilityService.compute_report(quadratic_problem(Q1=10.0, sigma1=0.5, sigma2=0.5))
        lam, rho, tr_R = 20.0, 4.0, 0.25
        lambda_S, lambda_R = lam / rho, lam / tr_R
        inv_RS = 1.0 / (lambda_R * lambda_S)
        lambda_RS = lambda_R * math.sqrt(lambda_S) / (8 * math.e) / (1 + 2 * inv_RS)
        assert report.lambda_RS == pytest.approx(lambda_RS, rel=1e-12)
        assert report.trace_cond_rhs == pytest.approx((lambda_S / lambda_R) * (0.5 + inv_RS), rel=1e-12)
        assert report.Lambda_minus_Gamma == pytest.approx(lam, rel=1e-12)
        hat = 0.5 + (0.5 - 1 / math.sqrt(lambda_S)) * (1 - 0.75 / math.sqrt(lambda_S))
        assert report.lambda_hat_ratio == pytest.approx(hat, rel=1e-12)
        assert report.delta_S == pytest.approx(math.sqrt(lambda_S) / 2)

    def test_lambda_hat_below_lambda_when_condition_holds(self):
        for Q1 in [5.0, 20.0, 80.0]:
            report = StabilityService.compute_report(quadratic_problem(Q1=Q1, sigma1=0.3))
            if report.cond_20:
                assert 0 < report.lambda_hat_dA <= report.lambda_dA

    def test_nonpositive_lambda_rejected(self):
        signal = ModelService.build_linear(np.array([[1.0]]), np.eye(1))
        problem = FilteringProblem(signal=signal, sensor=ModelService.fully_observed_sensor(1),
                                   x0_mean=np.zeros(1), P0=np.eye(1))
        with pytest.raises(ModelValidationError):
            StabilityService.compute_report(problem)

    def test_unobservable_sensor(self):
        report = StabilityService.compute_report(quadratic_problem(b=0.0))
        assert not report.observable
        assert report.lambda_S is None
        assert not report.cond_20

    def test_trace_premise_failure_is_noted(self):
        report = StabilityService.compute_report(quadratic_problem(P0=50.0))
        assert report.trace_cond_ok is False
        assert any("trace premise" in note for note in report.notes)

    def test_chi2_condition(self):
        assert StabilityService.compute_report(quadratic_problem(P0=0.1)).chi2_ok
        assert not StabilityService.compute_report(quadratic_problem(P0=1.0)).chi2_ok

    def test_anisotropic_sensor_fails_condition_S(self, linear_problem):
        problem = FilteringProblem(signal=linear_problem.signal,
                                   sensor=SensorModel(B=np.diag([1.0, 2.0]), R2=np.eye(2)),
                                   x0_mean=np.zeros(2), P0=np.eye(2))
        report = StabilityService.compute_report(problem)
        assert not report.cond_S
        assert report.cond_21 is None


class TestSimplifiedCondition:
    def test_squared_form_agrees_on_grid(self):
        for lam in np.linspace(4.5, 50.0, 20):
            for tr_R in np.geomspace(0.01, 500.0, 20):
                for kappa in [0.0, 0.01, 0.1, 1.0, 10.0]:
                    assert (StabilityService.cs_easy_inequality(lam, tr_R, kappa)
                            == StabilityService.cs_easy_squared_form(lam, tr_R, kappa))

    def test_quadratic_restatement_agrees(self):
        for v in np.linspace(2.0, 400.0, 40):
            for r1 in [1, 2, 5]:
                for sigma1 in [0.05, 0.2, 0.7, 1.3]:
                    assert (StabilityService.cs_easy_quadratic(v, r1, sigma1)
                            == StabilityService.cs_easy_inequality(v / 2.0, r1 * sigma1 ** 2, 0.0))

    def test_threshold_at_lambda_nine(self):
        rhs = (81.0 / 2.0) * (np.sqrt(1.0 + 1.0 / (12.0 * np.e)) - 1.0)
        assert rhs == pytest.approx(0.6161, abs=1e-3)
        assert not StabilityService.cs_easy_inequality(9.0, 1.0, 0.0)
        assert StabilityService.cs_easy_inequality(9.0, 0.6, 0.0)
        assert not StabilityService.cs_easy_inequality(9.0, 0.62, 0.0)

    def test_small_lambda_fails(self):
        assert not StabilityService.cs_easy_inequality(4.0, 1e-6, 0.0)

    def test_check_requires_identity_sensor(self):
        with pytest.raises(ConditionNotApplicableError):
            StabilityService.check_cs_easy(quadratic_problem(sigma2=0.5))

    def test_check_on_identity_sensor(self):
        problem = quadratic_problem(Q1=50.0, sigma1=0.1)
        assert StabilityService.check_cs_easy(problem) == StabilityService.cs_easy_inequality(100.0, 0.01, 0.0)

    def test_sufficient_condition_implies_condition(self):
        for Q1 in np.geomspace(1.0, 500.0, 15):
            for sigma1 in np.geomspace(0.01, 3.0, 10):
                report = StabilityService.compute_report(quadratic_problem(Q1=Q1, sigma1=sigma1))
                if report.sufficient_20:
                    assert report.cond_20
                assert StabilityService.sufficient_condition_20(report) == report.sufficient_20


class TestFunctionals:
    def test_varpi(self):
        assert StabilityService.varpi(0.0) == pytest.approx(math.e ** 2 / math.sqrt(2) / 2)
        with pytest.raises(ParameterError):
            StabilityService.varpi(-1.0)

    def test_gamma_on_exact_tracking(self):
        report = StabilityService.compute_report(quadratic_problem())
        times = np.linspace(0.0, 1.0, 11)
        X = np.zeros((11, 1))
        P = np.full((11, 1, 1), 0.1)
        stat = StabilityService.gamma_functional(times, X, X, P, report)
        assert np.allclose(stat.gamma, -8.0)
        assert np.allclose(stat.exponential, np.exp(-8.0 * times))
        assert stat.violations == 0
        assert stat.premise_failed == 0

    def test_moment_bound_requires_delta(self):
        report = StabilityService.compute_report(quadratic_problem())
        with pytest.raises(ParameterError):
            StabilityService.centered_moment_bound(report, 0.5, 1.0, 0.0, 0.0, 0.1)
        bound = StabilityService.centered_moment_bound(report, 1.0, 1.0, 0.0, 0.0, 0.1)
        assert bound > 0

    def test_concentration_bounds_shrink_with_time(self):
        report = StabilityService.compute_report(quadratic_problem(Q1=20.0))
        early = StabilityService.concentration_bounds(report, 3.0, 0.1, 1.0, 0.1)
        late = StabilityService.concentration_bounds(report, 3.0, 2.0, 1.0, 0.1)
        assert late.event_truth < early.event_truth
        assert late.event_diffusion <= early.event_diffusion

    def test_laplace_exponents(self):
        report = StabilityService.compute_report(quadratic_problem(Q1=20.0))
        exponents = StabilityService.laplace_exponents(report, 0.5, 1.0)
        lam = report.lambda_dA
        expected = lam * (1 + (0.75 - 1.0) / report.lambda_S - 0.5 * report.lambda_A / (2 * lam))
        assert exponents.Lambda_dA == pytest.approx(expected)
        with pytest.raises(ParameterError):
            StabilityService.laplace_exponents(report, 0.5, 0.0)

    def test_report_table_lists_fields(self):
        table = StabilityService.report_table(StabilityService.compute_report(quadratic_problem()))
        assert "lambda_S" in table
        assert "cond_20" in table
