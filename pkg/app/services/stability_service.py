"""
Servicio de parámetros de estabilidad
"""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.config import settings
from app.schemas.stability import StabilityReport
from app.services.model_service import FilteringProblem, ModelService
from app.utils import calculations
from app.utils.exceptions import ConditionNotApplicableError, ModelValidationError, ParameterError

E = math.e
INF = math.inf


def _ratio(numerator: float, denominator: float) -> float:
    """numerator/denominator con x/0 = ∞"""
    if denominator == 0:
        return INF
    return numerator / denominator


@dataclass(frozen=True, eq=False)
class GammaPathStat:
    """Γ_A(s) en la malla, su integral acumulada y ℰ_Γ(t) = exp∫Γ_A"""

    times: np.ndarray
    gamma: np.ndarray
    integral: np.ndarray
    exponential: np.ndarray
    premise: np.ndarray
    bound: float

    @property
    def violations(self) -> int:
        """Puntos con premisa válida donde -Γ_A supera Λ⁻_Γ"""
        return int(np.sum(self.premise & (-self.gamma > self.bound * (1 + 1e-12) + 1e-12)))

    @property
    def premise_failed(self) -> int:
        return int(np.sum(~self.premise))


@dataclass(frozen=True)
class LaplaceExponents:
    Lambda_dA: float
    sigma_squared: Optional[float]
    Lambda_plus_Gamma: Optional[float]
    c_delta: str = "undetermined constant"


@dataclass(frozen=True)
class ConcentrationBounds:
    event_truth: float
    event_diffusion: float


class StabilityService:
    """Servicio para calcular razones de estabilidad y condiciones suficientes"""

    @staticmethod
    def log_norm(M: np.ndarray) -> float:
        """logNorm(M) = λ_max((M + M')/2)"""
        return calculations.log_norm(M)

    @staticmethod
    def varpi(delta: float) -> float:
        """
        ϖ(δ) = (e²/√2)(1/2 + δ + √δ)
        """
        if delta < 0:
            raise ParameterError("varpi requires delta >= 0")
        return (E ** 2 / math.sqrt(2.0)) * (0.5 + delta + math.sqrt(delta))

    @staticmethod
    def compute_report(problem: FilteringProblem, chi2_delta: float = 1.0) -> StabilityReport:
        """
        Reporte completo de estabilidad

        λ_S = λ/ρ(S), λ_R = λ/tr(R), λ_K = λ/κ
        λ_RS = (8e)⁻¹ λ_R √λ_S [1 + 2/(λ_R λ_S)]⁻¹
        λ̂/λ = (1/2 - 2/(λ_K λ_R)) + (1/2 - 1/√λ_S)(1 - (3/4)/√λ_S)
        """
        signal = problem.signal
        lam = signal.lambda_dA
        kappa = signal.kappa_dA
        if lam <= 0:
            raise ModelValidationError(f"stability report requires lambda_dA > 0, got {lam}")
        diag = ModelService.effective_S(problem.sensor)
        rho = diag.rho
        tr_R = signal.tr_R
        r1 = problem.r1
        notes = []
        if not signal.certified:
            notes.append("signal constants are not certified for this model")

        lambda_R = _ratio(lam, tr_R)
        lambda_K = _ratio(lam, kappa)
        # 2/(λ_K λ_R) = 2κ tr(R)/λ²
        inv_KR = kappa * tr_R / lam ** 2
        Lambda_minus = lam * (1.0 - 2.0 * inv_KR)
        trP0 = float(np.trace(problem.P0))
        rho_P0 = float(np.linalg.eigvalsh(problem.P0)[-1])
        chi2_ok = r1 * rho_P0 <= 1.0 / (4.0 * chi2_delta)

        cond_21 = None
        if abs(rho - 1.0) <= settings.CONDITION_S_TOL and diag.is_condition_S:
            cond_21 = StabilityService.cs_easy_inequality(lam, tr_R, kappa)

        if rho <= 0.0:
            notes.append("sensor is not observable: rho(S) = 0")
            return StabilityReport(
                lambda_dA=lam, kappa_dA=kappa, lambda_A=signal.lambda_A_effective,
                certified=signal.certified, r1=r1, rho_S=rho, tr_R=tr_R, observable=False,
                lambda_R=lambda_R, lambda_K=lambda_K,
                cond_S=False, cond_20=False, cond_21=cond_21, sufficient_20=False,
                chi2_delta=chi2_delta, chi2_ok=chi2_ok,
                Lambda_minus_Gamma=Lambda_minus, notes=notes,
            )

        lambda_S = lam / rho
        # 1/(λ_R λ_S) = tr(R) ρ / λ²
        inv_RS = tr_R * rho / lam ** 2
        sqrt_S = math.sqrt(lambda_S)
        lambda_RS = lambda_R * sqrt_S / (8.0 * E) / (1.0 + 2.0 * inv_RS) if tr_R > 0 else INF
        hat_ratio = (0.5 - 2.0 * inv_KR) + (0.5 - 1.0 / sqrt_S) * (1.0 - 0.75 / sqrt_S)
        KR_over_4 = INF if kappa * tr_R == 0 else lam ** 2 / (kappa * tr_R) / 4.0
        cond_20 = min(KR_over_4, lambda_RS, lambda_S / 4.0) > 1.0
        trace_rhs = (tr_R / rho) * (0.5 + inv_RS)
        delta_S = sqrt_S / 2.0
        radius_expanded = 8.0 * E * lambda_S * inv_RS * (1.0 + 2.0 * inv_RS)
        radius = sqrt_S / lambda_RS if lambda_RS != INF else 0.0

        if not diag.is_condition_S:
            notes.append("condition (S) fails: S is not a positive multiple of the identity")
        if not cond_20:
            notes.append("stability condition fails: min{lambda_K lambda_R/4, lambda_RS, lambda_S/4} <= 1")
        if trP0 ** 2 > trace_rhs:
            notes.append("trace premise fails: tr(P0)^2 > (lambda_S/lambda_R)[1/2 + 1/(lambda_R lambda_S)]")

        return StabilityReport(
            lambda_dA=lam,
            kappa_dA=kappa,
            lambda_A=signal.lambda_A_effective,
            certified=signal.certified,
            r1=r1,
            rho_S=rho,
            tr_R=tr_R,
            observable=True,
            lambda_S=lambda_S,
            lambda_R=lambda_R,
            lambda_K=lambda_K,
            lambda_RS=lambda_RS,
            lambda_hat_ratio=hat_ratio,
            lambda_hat_dA=hat_ratio * lam,
            delta_S=delta_S,
            delta_S_prime=delta_S / 4.0,
            delta_RS=min(E * lambda_RS, delta_S),
            cond_S=diag.is_condition_S,
            cond_20=cond_20,
            cond_21=cond_21,
            sufficient_20=StabilityService._sufficient_20(lam, lambda_S, tr_R, kappa),
            trace_cond_rhs=trace_rhs,
            trace_cond_ok=trP0 ** 2 <= trace_rhs,
            chi2_delta=chi2_delta,
            chi2_ok=chi2_ok,
            Lambda_minus_Gamma=Lambda_minus,
            confidence_radius=radius,
            confidence_radius_expanded=radius_expanded,
            notes=notes,
        )

    @staticmethod
    def cs_easy_inequality(lam: float, tr_R: float, kappa: float) -> bool:
        """
        λ > 4 y tr(R) <= (λ²/2) min{1/(2κ), √(1 + 1/(4e√λ)) - 1}
        """
        if not lam > 4.0:
            return False
        root_term = math.sqrt(1.0 + 1.0 / (4.0 * E * math.sqrt(lam))) - 1.0
        kappa_term = INF if kappa == 0 else 1.0 / (2.0 * kappa)
        return tr_R <= (lam ** 2 / 2.0) * min(kappa_term, root_term)

    @staticmethod
    def cs_easy_squared_form(lam: float, tr_R: float, kappa: float) -> bool:
        """
        Forma cuadrada equivalente
        λ > 4, λ² >= 4κ tr(R), (λ²/2)²(1 + 1/(4e√λ)) >= (tr(R) + λ²/2)²
        """
        if not lam > 4.0:
            return False
        half = lam ** 2 / 2.0
        return (lam ** 2 >= 4.0 * kappa * tr_R
                and half ** 2 * (1.0 + 1.0 / (4.0 * E * math.sqrt(lam))) >= (tr_R + half) ** 2)

    @staticmethod
    def check_cs_easy(problem: FilteringProblem) -> bool:
        """Condición simplificada con S = Id; solo definida para ρ(S) = 1"""
        diag = ModelService.effective_S(problem.sensor)
        if abs(diag.rho - 1.0) > settings.CONDITION_S_TOL or not diag.is_condition_S:
            raise ConditionNotApplicableError(f"simplified condition requires S = Id, got rho(S) = {diag.rho}")
        signal = problem.signal
        return StabilityService.cs_easy_inequality(signal.lambda_dA, signal.tr_R, signal.kappa_dA)

    @staticmethod
    def cs_easy_quadratic(v: float, r1: int, sigma1: float) -> bool:
        """
        Condición simplificada para Langevin cuadrático con λ = v/2 y S = Id
        v/8 > 1 y 2√2e r1σ1² <= (v^{3/2}/8)/(√(1 + 1/(2√2e√v)) + 1)
        """
        if not v / 8.0 > 1.0:
            return False
        c = 2.0 * math.sqrt(2.0) * E
        return c * r1 * sigma1 ** 2 <= (v ** 1.5 / 8.0) / (math.sqrt(1.0 + 1.0 / (c * math.sqrt(v))) + 1.0)

    @staticmethod
    def _sufficient_20(lam: float, lambda_S: float, tr_R: float, kappa: float) -> bool:
        """(λ_K λ_R) ∧ λ_S > 4 y λ_R √λ_S > 4e(1 + √(1 + 1/(2e)))"""
        KR = INF if kappa * tr_R == 0 else lam ** 2 / (kappa * tr_R)
        lambda_R = _ratio(lam, tr_R)
        return (min(KR, lambda_S) > 4.0
                and lambda_R * math.sqrt(lambda_S) > 4.0 * E * (1.0 + math.sqrt(1.0 + 1.0 / (2.0 * E))))

    @staticmethod
    def sufficient_condition_20(report: StabilityReport) -> bool:
        if not report.observable:
            return False
        return StabilityService._sufficient_20(report.lambda_dA, report.lambda_S,
                                               report.tr_R, report.kappa_dA)

    @staticmethod
    def gamma_functional(times: np.ndarray, X: np.ndarray, xhat: np.ndarray, P: np.ndarray,
                         report: StabilityReport) -> GammaPathStat:
        """
        Γ_A(s) = -[λ - (2κ tr(P_s) + ρ(S)‖X_s - x̂_s‖)]
        Integral por sumas de Riemann a izquierda; premisa tr(P_s) <= tr(P0) + 1/λ_R
        """
        times = np.asarray(times, dtype=float)
        trP = np.trace(P, axis1=1, axis2=2)
        gaps = np.linalg.norm(np.asarray(X) - np.asarray(xhat), axis=1)
        gamma = -(report.lambda_dA - (2.0 * report.kappa_dA * trP + report.rho_S * gaps))
        dts = np.diff(times)
        integral = np.concatenate([[0.0], np.cumsum(gamma[:-1] * dts)])
        inv_lambda_R = report.tr_R / report.lambda_dA
        premise = trP <= trP[0] + inv_lambda_R + 1e-12
        return GammaPathStat(times=times, gamma=gamma, integral=integral,
                             exponential=np.exp(integral), premise=premise,
                             bound=report.Lambda_minus_Gamma)

    @staticmethod
    def centered_moment_bound(report: StabilityReport, delta: float, t: float, s: float,
                              gap_s: float, trP0: float) -> float:
        """
        Cota uniforme de momentos centrados
        e^{-λ(t-s)}‖X̄_s - x̂_s‖² + (2δ - 1)[λ_R⁻¹(1 + 2/(λ_R λ_S)) + 2e^{-λ(t+s)} tr(P0)²/λ_S]
        """
        if delta < 1:
            raise ParameterError("moment bound requires delta >= 1")
        if not report.observable:
            raise ConditionNotApplicableError("moment bound requires an observable sensor")
        lam = report.lambda_dA
        inv_R = report.tr_R / lam
        inv_RS = inv_R * report.rho_S / lam
        return (math.exp(-lam * (t - s)) * gap_s ** 2
                + (2.0 * delta - 1.0) * (inv_R * (1.0 + 2.0 * inv_RS)
                                         + 2.0 * math.exp(-lam * (t + s)) * trP0 ** 2 / report.lambda_S))

    @staticmethod
    def concentration_bounds(report: StabilityReport, delta: float, t: float,
                             initial_gap_sq: float, trp: float) -> ConcentrationBounds:
        """
        Cotas de concentración
        verdad:   ϖ√λ_S/(2e λ_RS) + 2e^{-λt}‖x - m‖² + 8ϖ|e^{-λ_A t} - e^{-λt}|/|λ_A/λ - 1| tr(p)²/λ_S
        difusión: ϖ√λ_S/(2e λ_RS) + 8ϖ e^{-λt} tr(p)²/λ_S
        """
        if not report.observable:
            raise ConditionNotApplicableError("concentration bounds require an observable sensor")
        w = StabilityService.varpi(delta)
        lam = report.lambda_dA
        lam_A = report.lambda_A
        base = w * (report.confidence_radius or 0.0) / (2.0 * E)
        ratio = lam_A / lam - 1.0
        if abs(ratio) < 1e-12:
            transient = lam * t * math.exp(-lam * t)
        else:
            transient = abs(math.exp(-lam_A * t) - math.exp(-lam * t)) / abs(ratio)
        tail = trp ** 2 / report.lambda_S
        return ConcentrationBounds(
            event_truth=base + 2.0 * math.exp(-lam * t) * initial_gap_sq + 8.0 * w * transient * tail,
            event_diffusion=base + 8.0 * w * math.exp(-lam * t) * tail,
        )

    @staticmethod
    def laplace_exponents(report: StabilityReport, eps: float, delta: float) -> LaplaceExponents:
        """
        Λ_∂A[ε,δ] = λ[1 - 2/(λ_Kλ_R) + (3/4 - δ)/λ_S - ελ_A/(2δλ)]
        σ²(ε,δ) = (λ_S/λ_R)[1/2 + 1/(λ_Rλ_S)](eελ_RS/δ - 1)
        Λ⁺_Γ = 2κσ - Λ_∂A[ε,δ] - (δ - 1)ρ(S)
        """
        if delta <= 0:
            raise ParameterError("laplace exponents require delta > 0")
        if not report.observable:
            raise ConditionNotApplicableError("laplace exponents require an observable sensor")
        lam = report.lambda_dA
        inv_KR = report.kappa_dA * report.tr_R / lam ** 2
        Lambda_dA = lam * (1.0 - 2.0 * inv_KR + (0.75 - delta) / report.lambda_S
                           - eps * report.lambda_A / (2.0 * delta * lam))
        sigma_sq = None
        Lambda_plus = None
        if report.lambda_RS != INF and report.trace_cond_rhs is not None:
            value = report.trace_cond_rhs * (E * eps * report.lambda_RS / delta - 1.0)
            if value >= 0:
                sigma_sq = value
                Lambda_plus = (2.0 * report.kappa_dA * math.sqrt(value) - Lambda_dA
                               - (delta - 1.0) * report.rho_S)
        return LaplaceExponents(Lambda_dA=Lambda_dA, sigma_squared=sigma_sq,
                                Lambda_plus_Gamma=Lambda_plus)

    @staticmethod
    def report_table(report: StabilityReport) -> str:
        """Tabla legible del reporte"""
        rows = []
        for key, value in report.model_dump().items():
            if key == "notes":
                continue
            rows.append(f"{key:<28} {value}")
        rows.extend(f"note: {note}" for note in report.notes)
        return "\n".join(rows) + "\n"
