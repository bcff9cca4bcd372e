"""
Servicio del filtro de Kalman-Bucy extendido
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.services.model_service import FilteringProblem
from app.utils.calculations import psd_project, symmetrize, upper_triangle
from app.utils.exceptions import DimensionMismatchError, ModelValidationError, NumericalBlowUp


@dataclass(frozen=True, eq=False)
class EkfState:
    """Media del filtro x̂_t, covarianza de Riccati P_t y tiempo t"""

    xhat: np.ndarray
    P: np.ndarray
    t: float = 0.0


@dataclass(frozen=True, eq=False)
class EkfTrajectory:
    times: np.ndarray
    xhat: np.ndarray
    P: np.ndarray

    @property
    def trace_P(self) -> np.ndarray:
        return np.trace(self.P, axis1=1, axis2=2)

    def state(self, k: int) -> EkfState:
        return EkfState(xhat=self.xhat[k], P=self.P[k], t=float(self.times[k]))

    def csv_rows(self) -> list:
        """Filas t, x̂, vec(P), tr(P)"""
        rows = []
        for k, t in enumerate(self.times):
            rows.append([t, *self.xhat[k], *upper_triangle(self.P[k]), float(np.trace(self.P[k]))])
        return rows


class EkfService:
    """Servicio para integrar el EKF y su ecuación de Riccati"""

    @staticmethod
    def initial_state(problem: FilteringProblem) -> EkfState:
        return EkfState(xhat=problem.x0_mean.copy(), P=problem.P0.copy(), t=0.0)

    @staticmethod
    def riccati_drift(P: np.ndarray, xhat: np.ndarray, problem: FilteringProblem,
                      theta: float = 0.0) -> np.ndarray:
        """
        Deriva de Riccati
        ∂A(x̂)P + P∂A(x̂)' + R - PSP (+ θ²S con inflación)
        """
        J = problem.signal.jacobian(xhat)
        S = problem.sensor.S
        drift = J @ P + P @ J.T + problem.signal.R1 - P @ S @ P
        if theta:
            drift = drift + theta ** 2 * S
        return symmetrize(drift)

    @staticmethod
    def gain(P: np.ndarray, problem: FilteringProblem, theta: float = 0.0) -> np.ndarray:
        """Ganancia (P + θId) B'R2⁻¹"""
        if theta:
            P = P + theta * np.eye(P.shape[0])
        return P @ problem.sensor.BtR2inv

    @staticmethod
    def ekf_step(state: EkfState, dY: np.ndarray, dt: float, problem: FilteringProblem,
                 theta: float = 0.0) -> EkfState:
        """
        Paso de Euler del EKF
        x̂ ← x̂ + A(x̂)dt + P B'R2⁻¹(dY - B x̂ dt)
        P ← psd_project(P + riccati_drift·dt)
        """
        if dt <= 0:
            raise ModelValidationError("dt must be > 0")
        B = problem.sensor.B
        innovation = dY - B @ state.xhat * dt
        xhat = (state.xhat + problem.signal.drift(state.xhat) * dt
                + EkfService.gain(state.P, problem, theta) @ innovation)
        P = state.P + EkfService.riccati_drift(state.P, state.xhat, problem, theta) * dt
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(xhat))):
            raise NumericalBlowUp(f"EKF state is not finite at t={state.t + dt:.6g}")
        P = psd_project(P)
        return EkfState(xhat=xhat, P=P, t=state.t + dt)

    @staticmethod
    def run_ekf(problem: FilteringProblem, dY: np.ndarray, dt: float,
                initial: Optional[EkfState] = None, theta: float = 0.0) -> EkfTrajectory:
        """Integrar el EKF a lo largo de los incrementos dY (n, r2)"""
        dY = np.asarray(dY, dtype=float)
        if dY.size == 0:
            dY = dY.reshape(0, problem.r2)
        if dY.ndim != 2 or dY.shape[1] != problem.r2:
            raise DimensionMismatchError(f"observation increments have shape {dY.shape}, expected (n, {problem.r2})")
        state = EkfService.initial_state(problem) if initial is None else initial
        n = dY.shape[0]
        r1 = problem.r1
        xhat = np.empty((n + 1, r1))
        P = np.empty((n + 1, r1, r1))
        xhat[0], P[0] = state.xhat, state.P
        for k in range(n):
            state = EkfService.ekf_step(state, dY[k], dt, problem, theta)
            xhat[k + 1], P[k + 1] = state.xhat, state.P
        times = initial.t + np.arange(n + 1) * dt if initial is not None else np.arange(n + 1) * dt
        return EkfTrajectory(times=times, xhat=xhat, P=P)

    @staticmethod
    def kalman_bucy_scalar_exact(a: float, r: float, s: float, P0: float, t) -> np.ndarray:
        """
        Solución exacta de dP/dt = 2aP + r - sP²
        Con s > 0: (P - P₊)/(P - P₋) = C e^{-s(P₊ - P₋)t}
        """
        t = np.asarray(t, dtype=float)
        if s > 0:
            disc = np.sqrt(a * a + r * s)
            p_plus = (a + disc) / s
            p_minus = (a - disc) / s
            if P0 == p_plus:
                return np.full_like(t, p_plus)
            c = (P0 - p_plus) / (P0 - p_minus)
            decay = c * np.exp(-s * (p_plus - p_minus) * t)
            return (p_plus - p_minus * decay) / (1.0 - decay)
        if a == 0:
            return P0 + r * t
        return (P0 + r / (2 * a)) * np.exp(2 * a * t) - r / (2 * a)

    @staticmethod
    def trace_bound(t, trP0: float, trR: float, lambda_dA: float) -> np.ndarray:
        """
        Cota de traza
        tr(P_t) <= e^{-λ t} tr(P0) + tr(R)/λ
        """
        t = np.asarray(t, dtype=float)
        return np.exp(-lambda_dA * t) * trP0 + trR / lambda_dA
