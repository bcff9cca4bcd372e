"""
Servicio de métricas estadísticas
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import stats

from app.config import settings
from app.schemas.stability import StabilityReport
from app.services.stability_service import StabilityService
from app.utils.exceptions import ParameterError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EmpiricalLaw:
    """M muestras uniformes en ℝ^d"""

    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples.reshape(-1, 1)
        if samples.shape[0] < 2:
            raise ParameterError("an empirical law needs at least 2 samples")
        object.__setattr__(self, "samples", samples)

    @property
    def M(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


@dataclass
class QVReport:
    """Variación cuadrática realizada contra la predicha"""

    realized: float
    predicted: float
    std: float
    z: float
    threshold: float

    @property
    def passed(self) -> bool:
        return abs(self.z) <= self.threshold


@dataclass
class RateFit:
    """Ajuste log-log statistic ≈ c N^{-β}"""

    N: List[int]
    statistic: List[float]
    beta_hat: float
    stderr: float
    intercept: float
    r_squared: float
    residuals: List[float] = field(default_factory=list)


@dataclass
class ExponentialFit:
    rate: float
    stderr: float
    r_squared: float


@dataclass
class ConcentrationReport:
    delta: float
    t: float
    threshold: float
    runs: int
    frequency_truth: float
    frequency_diffusion: float
    bound_truth: List[float]
    bound_diffusion: float

    def passed(self, slack: float = 0.0) -> bool:
        required = self.threshold - slack
        return self.frequency_truth >= required and self.frequency_diffusion >= required


class MetricsService:
    """Servicio de verificación estadística"""

    @staticmethod
    def wasserstein_1d(a: EmpiricalLaw, b: EmpiricalLaw, delta: float = 1.0) -> float:
        """
        Distancia de Wasserstein exacta en 1D por acoplamiento monótono
        W_δ = (mean |a_(i) - b_(i)|^δ)^{1/δ}
        """
        if delta < 1:
            raise ParameterError("wasserstein distance requires delta >= 1")
        if a.dim != 1 or b.dim != 1:
            raise ParameterError("wasserstein_1d requires one-dimensional samples")
        if a.M != b.M:
            raise ParameterError(f"sample counts differ: {a.M} vs {b.M}")
        gaps = np.abs(np.sort(a.samples[:, 0]) - np.sort(b.samples[:, 0]))
        return float(np.mean(gaps ** delta) ** (1.0 / delta))

    @staticmethod
    def wasserstein_coupled_upper(z1: np.ndarray, z2: np.ndarray, delta: float = 1.0) -> float:
        """
        Cota superior por acoplamiento explícito
        (mean ‖Z1ᵢ - Z2ᵢ‖^δ)^{1/δ} >= W_δ
        """
        z1 = np.asarray(z1, dtype=float)
        z2 = np.asarray(z2, dtype=float)
        if z1.shape != z2.shape:
            raise ParameterError(f"paired samples differ in shape: {z1.shape} vs {z2.shape}")
        diff = z1 - z2
        norms = np.abs(diff) if diff.ndim == 1 else np.linalg.norm(diff, axis=1)
        return float(np.mean(norms ** delta) ** (1.0 / delta))

    @staticmethod
    def qv_check(increments_a: np.ndarray, predicted_aa: np.ndarray, dt: float,
                 increments_b: Optional[np.ndarray] = None,
                 predicted_bb: Optional[np.ndarray] = None,
                 predicted_ab: Optional[np.ndarray] = None,
                 threshold: Optional[float] = None) -> QVReport:
        """
        Prueba de variación cuadrática

        Sin pareja: Σ(dM)² contra ∫σ² dt, con Var = Σ 2σ⁴dt².
        Con pareja: Σ dMₐ dM_b contra ∫c dt, con Var = Σ (σₐ²σ_b² + c²)dt².
        """
        threshold = settings.QV_Z_THRESHOLD if threshold is None else threshold
        a = np.asarray(increments_a, dtype=float).reshape(-1)
        sa = np.broadcast_to(np.asarray(predicted_aa, dtype=float), a.shape)
        if increments_b is None:
            realized = float(np.sum(a * a))
            predicted = float(np.sum(sa) * dt)
            variance = float(np.sum(2.0 * sa ** 2) * dt ** 2)
        else:
            b = np.asarray(increments_b, dtype=float).reshape(-1)
            sb = np.broadcast_to(np.asarray(predicted_bb, dtype=float), b.shape)
            c = np.zeros_like(a) if predicted_ab is None else np.broadcast_to(
                np.asarray(predicted_ab, dtype=float), a.shape)
            realized = float(np.sum(a * b))
            predicted = float(np.sum(c) * dt)
            variance = float(np.sum(sa * sb + c ** 2) * dt ** 2)
        std = math.sqrt(variance)
        z = (realized - predicted) / std if std > 0 else 0.0
        return QVReport(realized=realized, predicted=predicted, std=std, z=z, threshold=threshold)

    @staticmethod
    def ks_calibration(z_scores: Sequence[float]) -> float:
        """p-valor de Kolmogorov-Smirnov contra N(0, 1)"""
        return float(stats.kstest(np.asarray(z_scores, dtype=float), "norm").pvalue)

    @staticmethod
    def chaos_rate_fit(N_values: Sequence[int], statistics: Sequence[float]) -> RateFit:
        """
        Ajuste por mínimos cuadrados de log(statistic) contra log(N)
        β̂ = -pendiente
        """
        N = np.asarray(N_values, dtype=float)
        y = np.asarray(statistics, dtype=float)
        if N.size < 3 or N.size != y.size:
            raise ParameterError("rate fit needs at least 3 (N, statistic) pairs")
        if np.any(np.diff(N) <= 0):
            raise ParameterError("N grid must be strictly increasing")
        if np.any(y <= 0) or not np.all(np.isfinite(y)):
            raise ParameterError("rate fit requires positive finite statistics")
        if N[-1] / N[0] < 10:
            logger.warning("N grid spans less than one decade (%.3g to %.3g)", N[0], N[-1])
        x = np.log(N)
        ly = np.log(y)
        fit = stats.linregress(x, ly)
        residuals = ly - (fit.intercept + fit.slope * x)
        return RateFit(
            N=[int(n) for n in N],
            statistic=[float(v) for v in y],
            beta_hat=float(-fit.slope),
            stderr=float(fit.stderr),
            intercept=float(fit.intercept),
            r_squared=float(fit.rvalue ** 2),
            residuals=[float(r) for r in residuals],
        )

    @staticmethod
    def exponential_rate_fit(times: Sequence[float], values: Sequence[float]) -> ExponentialFit:
        """Tasa de decaimiento: y ≈ c e^{-rate·t}"""
        t = np.asarray(times, dtype=float)
        y = np.asarray(values, dtype=float)
        keep = y > 0
        if keep.sum() < 3:
            raise ParameterError("exponential fit needs at least 3 positive values")
        fit = stats.linregress(t[keep], np.log(y[keep]))
        return ExponentialFit(rate=float(-fit.slope), stderr=float(fit.stderr),
                              r_squared=float(fit.rvalue ** 2))

    @staticmethod
    def concentration_check(truth_sq_err: Sequence[float], diffusion_sq_err: Sequence[float],
                            initial_gap_sq: Sequence[float], trp: float, delta: float,
                            report: StabilityReport, t: float) -> ConcentrationReport:
        """
        Frecuencia de los dos eventos de concentración contra 1 - e^{-δ}

        truth_sq_err: ‖X_t(x) - x̂_t‖² por corrida; diffusion_sq_err: ‖X̄_t - x̂_t‖²;
        initial_gap_sq: ‖x - m‖² por corrida; trp: tr(p) de la ley inicial del filtro.
        """
        truth = np.asarray(truth_sq_err, dtype=float)
        diffusion = np.asarray(diffusion_sq_err, dtype=float)
        gaps = np.asarray(initial_gap_sq, dtype=float)
        bounds_truth = []
        hits_truth = 0
        bound_diffusion = None
        for err, gap in zip(truth, gaps):
            bounds = StabilityService.concentration_bounds(report, delta, t, float(gap), trp)
            bounds_truth.append(bounds.event_truth)
            bound_diffusion = bounds.event_diffusion
            hits_truth += int(err <= bounds.event_truth)
        if bound_diffusion is None:
            bound_diffusion = StabilityService.concentration_bounds(report, delta, t, 0.0, trp).event_diffusion
        runs = max(truth.size, 1)
        return ConcentrationReport(
            delta=delta,
            t=t,
            threshold=1.0 - math.exp(-delta),
            runs=int(truth.size),
            frequency_truth=hits_truth / runs,
            frequency_diffusion=float(np.mean(diffusion <= bound_diffusion)) if diffusion.size else 0.0,
            bound_truth=bounds_truth,
            bound_diffusion=float(bound_diffusion),
        )
