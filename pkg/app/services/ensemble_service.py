"""
Servicio del filtro de Kalman-Bucy extendido por ensamble (En-EKF)
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from app.services.ekf_service import EkfService, EkfState
from app.services.mckean_service import McKeanService
from app.services.model_service import FilteringProblem, ObservationPath
from app.utils.calculations import (
    exact_covariance, exact_mean, psd_sqrt, rowwise_apply, upper_triangle,
)
from app.utils.exceptions import ModelValidationError, NumericalBlowUp, TimeMismatchError
from app.utils.rng import StepNoise, StreamFactory

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EnsembleState:
    """Partículas ξⁱ con media m y covarianza reescalada p"""

    particles: np.ndarray
    m: np.ndarray
    p: np.ndarray
    t: float = 0.0

    @property
    def N(self) -> int:
        return self.particles.shape[0]

    @classmethod
    def from_particles(cls, particles: np.ndarray, t: float = 0.0) -> "EnsembleState":
        particles = np.atleast_2d(np.asarray(particles, dtype=float))
        if particles.shape[0] < 1:
            raise ModelValidationError("ensemble requires N >= 1")
        m = exact_mean(particles)
        return cls(particles=particles, m=m, p=exact_covariance(particles, m), t=t)


@dataclass(frozen=True, eq=False)
class ZetaState:
    """Partículas ζⁱ conducidas por (x̂_t, P_t) exactos"""

    particles: np.ndarray
    ekf: EkfState
    t: float = 0.0

    def __post_init__(self):
        if abs(self.ekf.t - self.t) > 1e-9:
            raise TimeMismatchError("zeta system and its EKF must share the same time")


@dataclass(frozen=True)
class XiError:
    """Ξ_t = ‖m - x̂‖² + ‖p - P‖_F²"""

    value: float


@dataclass(eq=False)
class EnsembleRun:
    """Trayectoria del ensamble (opcionalmente con EKF y sistema ζ pareados)"""

    times: np.ndarray
    m: np.ndarray
    p: np.ndarray
    lambda_min_p: np.ndarray
    xi: Optional[np.ndarray] = None
    xhat: Optional[np.ndarray] = None
    P: Optional[np.ndarray] = None
    particle_gap: Optional[np.ndarray] = None
    blow_up: bool = False
    blow_up_time: Optional[float] = None

    @property
    def trace_p(self) -> np.ndarray:
        return np.trace(self.p, axis1=1, axis2=2)

    def csv_rows(self) -> list:
        """Filas t, m, vec(p), tr(p), λ_min(p), Ξ, blow-up"""
        rows = []
        for k, t in enumerate(self.times):
            row = [t, *self.m[k], *upper_triangle(self.p[k]), float(np.trace(self.p[k])),
                   float(self.lambda_min_p[k])]
            if self.xi is not None:
                row.append(float(self.xi[k]))
            row.append(self.blow_up and k == len(self.times) - 1)
            rows.append(row)
        return rows


@dataclass
class DivergenceReport:
    """Diagnóstico cualitativo de crecimiento del ensamble"""

    N: int
    max_norm_m: float
    min_lambda_min_p: float
    max_lambda_min_p: float
    growth_rate: Optional[float]
    blow_up: bool
    blow_up_time: Optional[float]
    horizon: float
    notes: List[str] = field(default_factory=list)


class EnsembleService:
    """Servicio para el sistema de partículas En-EKF"""

    @staticmethod
    def init_ensemble(problem: FilteringProblem, N: int, rng: np.random.Generator) -> EnsembleState:
        """ξⁱ₀ ~ N(x0_mean, P0) i.i.d."""
        if N < 1:
            raise ModelValidationError("ensemble requires N >= 1")
        Z = rng.standard_normal((N, problem.r1))
        particles = problem.x0_mean[None, :] + rowwise_apply(psd_sqrt(problem.P0), Z)
        return EnsembleState.from_particles(particles, t=0.0)

    @staticmethod
    def init_zeta(ensemble: EnsembleState, problem: FilteringProblem) -> ZetaState:
        """ζ₀ = ξ₀, EKF desde (x0_mean, P0)"""
        ekf = EkfService.initial_state(problem)
        return ZetaState(particles=ensemble.particles.copy(),
                         ekf=EkfState(xhat=ekf.xhat, P=ekf.P, t=ensemble.t), t=ensemble.t)

    @staticmethod
    def _propagate(particles: np.ndarray, center: np.ndarray, cov: np.ndarray,
                   dY: np.ndarray, dt: float, dW: np.ndarray, dV: np.ndarray,
                   problem: FilteringProblem, theta: float) -> np.ndarray:
        sensor = problem.sensor
        G = EkfService.gain(cov, problem, theta)
        innovation = (dY[None, :] - rowwise_apply(sensor.B, particles) * dt
                      - rowwise_apply(sensor.R2_sqrt, dV))
        return (particles + McKeanService.nonlinear_drift(particles, center, problem) * dt
                + rowwise_apply(problem.signal.R1_sqrt, dW) + rowwise_apply(G, innovation))

    @staticmethod
    def enkf_step(state: EnsembleState, dY: np.ndarray, dt: float, dW: np.ndarray, dV: np.ndarray,
                  problem: FilteringProblem, theta: float = 0.0) -> EnsembleState:
        """
        Paso síncrono del En-EKF
        ξⁱ ← ξⁱ + 𝒜(ξⁱ, m)dt + R1^{1/2}dW̄ⁱ + (p + θId)B'R2⁻¹(dY - (Bξⁱdt + R2^{1/2}dV̄ⁱ))
        """
        if state.N < 1:
            raise ModelValidationError("ensemble requires N >= 1")
        if theta < 0:
            raise ModelValidationError("inflation theta must be >= 0")
        particles = EnsembleService._propagate(state.particles, state.m, state.p, dY, dt,
                                               dW, dV, problem, theta)
        return EnsembleState.from_particles(particles, t=state.t + dt)

    @staticmethod
    def zeta_step(state: ZetaState, dY: np.ndarray, dt: float, dW: np.ndarray, dV: np.ndarray,
                  problem: FilteringProblem, theta: float = 0.0) -> ZetaState:
        """Como enkf_step pero con (x̂_t, P_t) en la deriva y la ganancia"""
        particles = EnsembleService._propagate(state.particles, state.ekf.xhat, state.ekf.P, dY, dt,
                                               dW, dV, problem, theta)
        ekf = EkfService.ekf_step(state.ekf, dY, dt, problem, theta)
        return ZetaState(particles=particles, ekf=ekf, t=state.t + dt)

    @staticmethod
    def xi_error(state: EnsembleState, ekf: EkfState) -> XiError:
        """Ξ_t = ‖m - x̂‖² + ‖p - P‖_F²"""
        if abs(state.t - ekf.t) > 1e-9:
            raise TimeMismatchError(f"ensemble at t={state.t} compared with EKF at t={ekf.t}")
        gap_m = state.m - ekf.xhat
        gap_p = state.p - ekf.P
        return XiError(value=float(gap_m @ gap_m + np.sum(gap_p * gap_p)))

    @staticmethod
    def fluctuation_increments(pre: EnsembleState, post: EnsembleState, dY: np.ndarray, dt: float,
                               problem: FilteringProblem,
                               theta: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
        """
        Incrementos de martingala reescalados
        dM̄ = √N (dm - [A(m)dt + (p + θId)B'R2⁻¹(dY - Bm dt)])
        dM = √(N-1) (dp - [∂A(m)p + p∂A(m)' - pSp + R + θ²S]dt)
        """
        N = pre.N
        signal = problem.signal
        sensor = problem.sensor
        m, p = pre.m, pre.p
        drift_m = signal.drift(m) * dt + EkfService.gain(p, problem, theta) @ (dY - sensor.B @ m * dt)
        dMbar = np.sqrt(N) * (post.m - m - drift_m)
        if N < 2:
            return dMbar, np.zeros_like(p)
        drift_p = EkfService.riccati_drift(p, m, problem, theta) * dt
        dM = np.sqrt(N - 1) * (post.p - p - drift_p)
        return dMbar, dM

    @staticmethod
    def run_enkf(problem: FilteringProblem, obs: ObservationPath, N: int,
                 streams: StreamFactory, theta: float = 0.0, paired_ekf: bool = True,
                 zeta: bool = False, permutation: Optional[np.ndarray] = None) -> EnsembleRun:
        """
        Integrar el En-EKF sobre una trayectoria de observación

        Con `paired_ekf` registra Ξ_t; con `zeta` además ‖ξ¹_t - ζ¹_t‖² con los
        mismos ruidos. Un estado no finito detiene la corrida y marca blow-up.
        """
        dt = obs.dt
        n = obs.dY.shape[0]
        r1 = problem.r1
        state = EnsembleService.init_ensemble(problem, N, streams.generator("initial"))
        if permutation is not None:
            state = EnsembleState.from_particles(state.particles[permutation], t=state.t)
        noise = StepNoise(streams, "particles", N, r1, problem.r2, permutation=permutation)
        ekf = EkfService.initial_state(problem) if (paired_ekf or zeta) else None
        zeta_state = EnsembleService.init_zeta(state, problem) if zeta else None

        m = np.full((n + 1, r1), np.nan)
        p = np.full((n + 1, r1, r1), np.nan)
        lam = np.full(n + 1, np.nan)
        xi = np.full(n + 1, np.nan) if ekf is not None else None
        xhat = np.full((n + 1, r1), np.nan) if ekf is not None else None
        P = np.full((n + 1, r1, r1), np.nan) if ekf is not None else None
        gap = np.full(n + 1, np.nan) if zeta else None

        def record(k: int) -> None:
            m[k], p[k] = state.m, state.p
            lam[k] = np.linalg.eigvalsh(state.p)[0]
            if ekf is not None:
                xi[k] = EnsembleService.xi_error(state, ekf).value
                xhat[k], P[k] = ekf.xhat, ekf.P
            if zeta_state is not None:
                d = state.particles[0] - zeta_state.particles[0]
                gap[k] = float(d @ d)

        record(0)
        blow_up_time = None
        last = n
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(n):
                dW, dV = noise.draw(k, dt)
                state = EnsembleService.enkf_step(state, obs.dY[k], dt, dW, dV, problem, theta)
                if not (np.all(np.isfinite(state.particles)) and np.all(np.isfinite(state.p))):
                    blow_up_time = state.t
                    last = k
                    logger.warning("Ensemble blow-up at t=%.6g (N=%d)", state.t, N)
                    break
                try:
                    if zeta_state is not None:
                        zeta_state = EnsembleService.zeta_step(zeta_state, obs.dY[k], dt, dW, dV, problem, theta)
                        ekf = zeta_state.ekf
                    elif ekf is not None:
                        ekf = EkfService.ekf_step(ekf, obs.dY[k], dt, problem, theta)
                except NumericalBlowUp:
                    blow_up_time = state.t
                    last = k
                    logger.warning("Paired EKF blow-up at t=%.6g (N=%d)", state.t, N)
                    break
                record(k + 1)

        end = last + 1
        times = np.arange(n + 1)[:end] * dt
        return EnsembleRun(
            times=times,
            m=m[:end],
            p=p[:end],
            lambda_min_p=lam[:end],
            xi=None if xi is None else xi[:end],
            xhat=None if xhat is None else xhat[:end],
            P=None if P is None else P[:end],
            particle_gap=None if gap is None else gap[:end],
            blow_up=blow_up_time is not None,
            blow_up_time=blow_up_time,
        )

    @staticmethod
    def divergence_probe(problem: FilteringProblem, obs: ObservationPath, N: int,
                         streams: StreamFactory, theta: float = 0.0) -> DivergenceReport:
        """
        Sonda cualitativa de divergencia
        Reporta max‖m_t‖, λ_min(p_t), tasa de crecimiento de log‖m_t‖ y blow-up
        """
        run = EnsembleService.run_enkf(problem, obs, N, streams, theta=theta, paired_ekf=False)
        norms = np.linalg.norm(run.m, axis=1)
        notes = []
        if N < problem.r1:
            notes.append(f"N={N} < r1={problem.r1}: p_t is rank deficient")
        growth = None
        positive = norms > 0
        if positive.sum() >= 3:
            growth = float(np.polyfit(run.times[positive], np.log(norms[positive]), 1)[0])
        return DivergenceReport(
            N=N,
            max_norm_m=float(np.nanmax(norms)),
            min_lambda_min_p=float(np.nanmin(run.lambda_min_p)),
            max_lambda_min_p=float(np.nanmax(run.lambda_min_p)),
            growth_rate=growth,
            blow_up=run.blow_up,
            blow_up_time=run.blow_up_time,
            horizon=float(run.times[-1]),
            notes=notes,
        )
