"""
Servicio de la difusión McKean-Vlasov del EKF
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.services.ekf_service import EkfService, EkfState, EkfTrajectory
from app.services.model_service import FilteringProblem, ObservationPath
from app.utils.calculations import exact_covariance, exact_mean, psd_sqrt, rowwise_apply
from app.utils.exceptions import TimeMismatchError
from app.utils.rng import StreamFactory


@dataclass(frozen=True, eq=False)
class McKeanState:
    """
    X̄_t esclavizada a (x̂_t, P_t)

    `xbar` es un vector (r1,) o un lote (M, r1) de copias que comparten
    la misma trayectoria de observación.
    """

    xbar: np.ndarray
    ekf: EkfState
    t: float = 0.0

    def __post_init__(self):
        if abs(self.ekf.t - self.t) > 1e-9:
            raise TimeMismatchError(f"McKean state at t={self.t} slaved to EKF at t={self.ekf.t}")


@dataclass(frozen=True, eq=False)
class SharedIncrements:
    """Incrementos comunes (dY, dW̄, dV̄) de un paso"""

    dY: np.ndarray
    dWbar: np.ndarray
    dVbar: np.ndarray


@dataclass(frozen=True, eq=False)
class CoupledPair:
    a: McKeanState
    b: McKeanState
    shared: Optional[SharedIncrements] = None

    def __post_init__(self):
        if abs(self.a.t - self.b.t) > 1e-9:
            raise TimeMismatchError("coupled legs must share the same time")

    def squared_distance(self) -> np.ndarray:
        diff = np.atleast_2d(self.a.xbar - self.b.xbar)
        return np.einsum("ij,ij->i", diff, diff)


@dataclass(frozen=True, eq=False)
class CopiesResult:
    """Media y covarianza empíricas de M copias junto al EKF esclavo"""

    times: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    ekf: EkfTrajectory
    M: int


@dataclass(frozen=True, eq=False)
class CouplingResult:
    """Distancias ‖X̄_t - Z̄_t‖² por trayectoria (n+1, paths)"""

    times: np.ndarray
    squared_distance: np.ndarray
    initial_gap: np.ndarray


class McKeanService:
    """Servicio para simular la difusión EKF y sus acoplamientos"""

    @staticmethod
    def nonlinear_drift(x: np.ndarray, m: np.ndarray, problem: FilteringProblem) -> np.ndarray:
        """
        Deriva linealizada
        𝒜(x, m) = A(m) + ∂A(m)(x - m)
        """
        signal = problem.signal
        x = np.asarray(x, dtype=float)
        J = signal.jacobian(m)
        if x.ndim == 1:
            return signal.drift(m) + J @ (x - m)
        return signal.drift(m)[None, :] + rowwise_apply(J, x - m)

    @staticmethod
    def mckean_step(state: McKeanState, dY: np.ndarray, dWbar: np.ndarray, dVbar: np.ndarray,
                    dt: float, problem: FilteringProblem, theta: float = 0.0) -> McKeanState:
        """
        Paso de Euler de la difusión
        X̄ ← X̄ + 𝒜(X̄, x̂)dt + R1^{1/2}dW̄ + (P + θId)B'R2⁻¹(dY - (B X̄ dt + R2^{1/2}dV̄))
        """
        signal = problem.signal
        sensor = problem.sensor
        ekf = state.ekf
        G = EkfService.gain(ekf.P, problem, theta)
        xbar = np.asarray(state.xbar, dtype=float)
        batch = xbar.ndim == 2
        X = np.atleast_2d(xbar)
        dW = np.atleast_2d(dWbar)
        dV = np.atleast_2d(dVbar)
        innovation = (dY[None, :] - rowwise_apply(sensor.B, X) * dt
                      - rowwise_apply(sensor.R2_sqrt, dV))
        X_new = (X + McKeanService.nonlinear_drift(X, ekf.xhat, problem) * dt
                 + rowwise_apply(signal.R1_sqrt, dW) + rowwise_apply(G, innovation))
        new_ekf = EkfService.ekf_step(ekf, dY, dt, problem, theta)
        return McKeanState(xbar=X_new if batch else X_new[0], ekf=new_ekf, t=state.t + dt)

    @staticmethod
    def coupled_step(pair: CoupledPair, shared: SharedIncrements, dt: float,
                     problem: FilteringProblem) -> CoupledPair:
        """Avanza ambas piernas con los mismos (dY, dW̄, dV̄)"""
        step = McKeanService.mckean_step
        a = step(pair.a, shared.dY, shared.dWbar, shared.dVbar, dt, problem)
        b = step(pair.b, shared.dY, shared.dWbar, shared.dVbar, dt, problem)
        return CoupledPair(a=a, b=b, shared=shared)

    @staticmethod
    def run_copies(problem: FilteringProblem, obs: ObservationPath, M: int,
                   rng: np.random.Generator, theta: float = 0.0) -> CopiesResult:
        """
        M copias i.i.d. de la difusión sobre una trayectoria de observación
        Condiciones iniciales X̄₀ ~ N(x0_mean, P0)
        """
        r1, r2 = problem.r1, problem.r2
        dt = obs.dt
        n = obs.dY.shape[0]
        X0 = problem.x0_mean[None, :] + rng.standard_normal((M, r1)) @ psd_sqrt(problem.P0).T
        state = McKeanState(xbar=X0, ekf=EkfService.initial_state(problem), t=0.0)

        mean = np.empty((n + 1, r1))
        cov = np.empty((n + 1, r1, r1))
        xhat = np.empty((n + 1, r1))
        P = np.empty((n + 1, r1, r1))

        def record(k: int, s: McKeanState) -> None:
            mean[k] = exact_mean(s.xbar)
            cov[k] = exact_covariance(s.xbar, mean[k])
            xhat[k], P[k] = s.ekf.xhat, s.ekf.P

        record(0, state)
        sqrt_dt = np.sqrt(dt)
        for k in range(n):
            noise = rng.standard_normal((M, r1 + r2)) * sqrt_dt
            state = McKeanService.mckean_step(state, obs.dY[k], noise[:, :r1], noise[:, r1:],
                                              dt, problem, theta)
            record(k + 1, state)
        times = np.arange(n + 1) * dt
        return CopiesResult(times=times, mean=mean, cov=cov,
                            ekf=EkfTrajectory(times=times, xhat=xhat, P=P), M=M)

    @staticmethod
    def run_coupling(problem: FilteringProblem, obs: ObservationPath,
                     x0_a: np.ndarray, x0_b: np.ndarray,
                     ekf_a: EkfState, ekf_b: EkfState,
                     streams: StreamFactory) -> CouplingResult:
        """
        Acoplamiento de dos piernas con el mismo ruido
        x0_a, x0_b: (paths, r1) condiciones iniciales de X̄ y Z̄
        """
        r1, r2 = problem.r1, problem.r2
        dt = obs.dt
        n = obs.dY.shape[0]
        x0_a = np.atleast_2d(x0_a)
        pair = CoupledPair(a=McKeanState(xbar=x0_a, ekf=ekf_a, t=ekf_a.t),
                           b=McKeanState(xbar=np.atleast_2d(x0_b), ekf=ekf_b, t=ekf_b.t))
        distances = np.empty((n + 1, x0_a.shape[0]))
        distances[0] = pair.squared_distance()
        for k in range(n):
            rng = streams.generator("coupling", k)
            noise = rng.standard_normal((x0_a.shape[0], r1 + r2)) * np.sqrt(dt)
            shared = SharedIncrements(dY=obs.dY[k], dWbar=noise[:, :r1], dVbar=noise[:, r1:])
            pair = McKeanService.coupled_step(pair, shared, dt, problem)
            distances[k + 1] = pair.squared_distance()
        return CouplingResult(times=ekf_a.t + np.arange(n + 1) * dt,
                              squared_distance=distances, initial_gap=distances[0].copy())
