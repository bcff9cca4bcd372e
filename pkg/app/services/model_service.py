"""
Servicio de modelos de filtrado (señal + sensor)
"""
import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from app.config import settings
from app.utils.calculations import (
    is_psd, is_spd, log_norm, psd_sqrt, spd_inv_sqrt, spectral_norm, symmetrize,
)
from app.utils.exceptions import DimensionMismatchError, ModelValidationError

logger = logging.getLogger(__name__)

Drift = Callable[[np.ndarray], np.ndarray]


def _as_matrix(value, name: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(value, dtype=float))
    if M.ndim != 2:
        raise ModelValidationError(f"{name} must be a matrix")
    return M


@dataclass(frozen=True, eq=False)
class SignalModel:
    """Deriva A, jacobiano ∂A, covarianza R1 y constantes certificadas"""

    dim: int
    drift: Drift
    jacobian: Drift
    R1: np.ndarray
    lambda_dA: float
    kappa_dA: float
    lambda_A: Optional[float] = None
    name: str = "custom"
    certified: bool = True

    def __post_init__(self):
        R1 = _as_matrix(self.R1, "R1")
        if self.dim < 1:
            raise ModelValidationError("signal dimension must be >= 1")
        if R1.shape != (self.dim, self.dim):
            raise DimensionMismatchError(f"R1 has shape {R1.shape}, expected ({self.dim}, {self.dim})")
        if not is_psd(R1):
            raise ModelValidationError("R1 must be symmetric positive semidefinite")
        if not np.isfinite(self.lambda_dA):
            raise ModelValidationError("lambda_dA must be finite")
        if not np.isfinite(self.kappa_dA) or self.kappa_dA < 0:
            raise ModelValidationError("kappa_dA must be a finite nonnegative real")
        object.__setattr__(self, "R1", symmetrize(R1))
        object.__setattr__(self, "R1_sqrt", psd_sqrt(R1))

    @property
    def lambda_A_effective(self) -> float:
        """λ_A: valor del usuario o λ_∂A/2"""
        return self.lambda_A if self.lambda_A is not None else self.lambda_dA / 2.0

    @property
    def tr_R(self) -> float:
        return float(np.trace(self.R1))


@dataclass(frozen=True, eq=False)
class SensorModel:
    """Matriz de observación B y covarianza R2"""

    B: np.ndarray
    R2: np.ndarray

    def __post_init__(self):
        B = _as_matrix(self.B, "B")
        R2 = _as_matrix(self.R2, "R2")
        if R2.shape != (B.shape[0], B.shape[0]):
            raise DimensionMismatchError(f"R2 has shape {R2.shape}, expected ({B.shape[0]}, {B.shape[0]})")
        if not is_spd(R2):
            raise ModelValidationError("R2 must be symmetric positive definite")
        R2 = symmetrize(R2)
        R2_inv = symmetrize(np.linalg.inv(R2))
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "R2", R2)
        object.__setattr__(self, "R2_inv", R2_inv)
        object.__setattr__(self, "R2_sqrt", psd_sqrt(R2))
        object.__setattr__(self, "R2_inv_sqrt", spd_inv_sqrt(R2))
        object.__setattr__(self, "BtR2inv", B.T @ R2_inv)
        object.__setattr__(self, "S", symmetrize(B.T @ R2_inv @ B))

    @property
    def r1(self) -> int:
        return self.B.shape[1]

    @property
    def r2(self) -> int:
        return self.B.shape[0]


@dataclass(frozen=True, eq=False)
class FilteringProblem:
    """Problema de filtrado: señal, sensor y ley inicial N(x0_mean, P0)"""

    signal: SignalModel
    sensor: SensorModel
    x0_mean: np.ndarray
    P0: np.ndarray

    def __post_init__(self):
        r1 = self.signal.dim
        x0 = np.asarray(self.x0_mean, dtype=float).reshape(-1)
        P0 = _as_matrix(self.P0, "P0")
        if self.sensor.r1 != r1:
            raise DimensionMismatchError(f"B has {self.sensor.r1} columns, signal dimension is {r1}")
        if x0.shape != (r1,):
            raise DimensionMismatchError(f"x0_mean has length {x0.size}, expected {r1}")
        if P0.shape != (r1, r1):
            raise DimensionMismatchError(f"P0 has shape {P0.shape}, expected ({r1}, {r1})")
        if not is_psd(P0):
            raise ModelValidationError("P0 must be symmetric positive semidefinite")
        object.__setattr__(self, "x0_mean", x0)
        object.__setattr__(self, "P0", symmetrize(P0))

    @property
    def r1(self) -> int:
        return self.signal.dim

    @property
    def r2(self) -> int:
        return self.sensor.r2


@dataclass(frozen=True, eq=False)
class QuadraticPotentialSpec:
    Q1: np.ndarray
    q: np.ndarray
    beta: float = 1.0
    sigma1: float = 1.0


@dataclass(frozen=True, eq=False)
class CubicPotentialSpec:
    Q1: np.ndarray
    Q2: np.ndarray
    q: np.ndarray
    beta: float = 1.0
    sigma1: float = 1.0


@dataclass(frozen=True)
class SitePotential:
    """
    Potencial de un sitio U1(x) = u x²/2 + κ|x|³/6
    U1'' = u + κ|x| >= u, con constante de Lipschitz κ
    """

    u: float
    kappa: float = 0.0

    def grad(self, x: float) -> float:
        return self.u * x + 0.5 * self.kappa * abs(x) * x

    def hess(self, x: float) -> float:
        return self.u + self.kappa * abs(x)


@dataclass(frozen=True)
class PairPotential:
    """
    Potencial de par U2(a, b) = u‖z‖²/2 + κ‖z‖³/6 + c(a - b)²/2, z = (a, b)
    Hessiano >= u·Id con constante de Lipschitz κ
    """

    u: float
    kappa: float = 0.0
    coupling: float = 0.0

    def grad(self, a: float, b: float) -> np.ndarray:
        z = np.array([a, b], dtype=float)
        norm = float(np.hypot(a, b))
        g = self.u * z + 0.5 * self.kappa * norm * z
        return g + self.coupling * (a - b) * np.array([1.0, -1.0])

    def hess(self, a: float, b: float) -> np.ndarray:
        z = np.array([a, b], dtype=float)
        norm = float(np.hypot(a, b))
        H = self.u * np.eye(2) + self.coupling * np.array([[1.0, -1.0], [-1.0, 1.0]])
        if norm > 0.0:
            H = H + 0.5 * self.kappa * (norm * np.eye(2) + np.outer(z, z) / norm)
        return H


@dataclass(frozen=True, eq=False)
class SensorDiagnostics:
    S: np.ndarray
    is_condition_S: bool
    rho: float


@dataclass(frozen=True, eq=False)
class SignalPath:
    times: np.ndarray
    states: np.ndarray


@dataclass(frozen=True, eq=False)
class ObservationPath:
    """Trayectoria oculta X_k y incrementos dY_k = B X_k dt + R2^{1/2} ΔV_k"""

    times: np.ndarray
    truth: np.ndarray
    dY: np.ndarray
    dt: float


@dataclass(frozen=True)
class InvariantCheck:
    """Máximos observados de los invariantes de la señal (<= 0 si se cumplen)"""

    log_norm_excess: float
    lipschitz_excess: float
    one_sided_excess: float
    samples: int

    @property
    def passed(self) -> bool:
        return max(self.log_norm_excess, self.lipschitz_excess, self.one_sided_excess) <= 1e-8


def _n_steps(dt: float, T: float) -> int:
    if dt <= 0:
        raise ModelValidationError("dt must be > 0")
    if T < dt:
        raise ModelValidationError("T must be >= dt")
    return int(round(T / dt))


class ModelService:
    """Servicio para construir y simular problemas de filtrado"""

    @staticmethod
    def build_linear(A, R1, lambda_dA: Optional[float] = None, name: str = "linear") -> SignalModel:
        """
        Señal lineal A(x) = A x
        λ_∂A = -logNorm(A + A') (exacto), κ_∂A = 0
        """
        A = _as_matrix(A, "A")
        if A.shape[0] != A.shape[1]:
            raise ModelValidationError("A must be square")
        lam = -log_norm(A + A.T) if lambda_dA is None else float(lambda_dA)
        return SignalModel(
            dim=A.shape[0],
            drift=lambda x: A @ x,
            jacobian=lambda x: A,
            R1=_as_matrix(R1, "R1"),
            lambda_dA=lam,
            kappa_dA=0.0,
            name=name,
        )

    @staticmethod
    def build_quadratic_langevin(spec: QuadraticPotentialSpec) -> SignalModel:
        """
        Langevin cuadrático A(x) = -β(Q1 x + q)
        λ_∂A = 2β λ_min(Q1), κ_∂A = 0, R1 = σ1² Id
        """
        Q1 = _as_matrix(spec.Q1, "Q1")
        r1 = Q1.shape[0]
        q = np.zeros(r1) if spec.q is None else np.asarray(spec.q, dtype=float).reshape(-1)
        if not is_spd(Q1):
            raise ModelValidationError("Q1 must be symmetric positive definite")
        if q.shape != (r1,):
            raise DimensionMismatchError(f"q has length {q.size}, expected {r1}")
        ModelService._check_positive(beta=spec.beta, sigma1=spec.sigma1)

        beta = float(spec.beta)
        jac = -beta * Q1
        return SignalModel(
            dim=r1,
            drift=lambda x: -beta * (Q1 @ x + q),
            jacobian=lambda x: jac,
            R1=spec.sigma1 ** 2 * np.eye(r1),
            lambda_dA=2.0 * beta * float(np.linalg.eigvalsh(Q1)[0]),
            kappa_dA=0.0,
            name="quadratic",
        )

    @staticmethod
    def build_cubic_langevin(spec: CubicPotentialSpec) -> SignalModel:
        """
        Langevin cúbico A(x) = -β(q + Q1 x + ⟨Q2x,x⟩^{1/2} Q2 x)
        ∂A(x) = -β(Q1 + ⟨Q2x,x⟩^{1/2} Q2 + ⟨Q2x,x⟩^{-1/2} Q2 x x' Q2), ∂A(0) = -β Q1
        λ_∂A = β λ_min(Q1), κ_∂A = 2β λ_max(Q2)^{3/2}
        """
        Q1 = _as_matrix(spec.Q1, "Q1")
        Q2 = _as_matrix(spec.Q2, "Q2")
        r1 = Q1.shape[0]
        q = np.zeros(r1) if spec.q is None else np.asarray(spec.q, dtype=float).reshape(-1)
        if not is_spd(Q1) or not is_spd(Q2):
            raise ModelValidationError("Q1 and Q2 must be symmetric positive definite")
        if Q2.shape != Q1.shape or q.shape != (r1,):
            raise DimensionMismatchError("Q1, Q2 and q must share the signal dimension")
        ModelService._check_positive(beta=spec.beta, sigma1=spec.sigma1)
        beta = float(spec.beta)

        def drift(x: np.ndarray) -> np.ndarray:
            Q2x = Q2 @ x
            s = np.sqrt(max(float(Q2x @ x), 0.0))
            return -beta * (q + Q1 @ x + s * Q2x)

        def jacobian(x: np.ndarray) -> np.ndarray:
            Q2x = Q2 @ x
            s = np.sqrt(max(float(Q2x @ x), 0.0))
            if s == 0.0:
                return -beta * Q1
            return -beta * (Q1 + s * Q2 + np.outer(Q2x, Q2x) / s)

        return SignalModel(
            dim=r1,
            drift=drift,
            jacobian=jacobian,
            R1=spec.sigma1 ** 2 * np.eye(r1),
            lambda_dA=beta * float(np.linalg.eigvalsh(Q1)[0]),
            kappa_dA=2.0 * beta * float(np.linalg.eigvalsh(Q2)[-1]) ** 1.5,
            name="cubic",
        )

    @staticmethod
    def build_interacting_potential(u1_hessian_lb: float, u2_hessian_lb: float,
                                    kappa1: float, kappa2: float, r1: int,
                                    U1: SitePotential, U2: PairPotential,
                                    beta: float = 1.0, sigma1: float = 1.0) -> SignalModel:
        """
        Difusión de gradiente con interacción
        𝒱(x) = Σᵢ U1(xᵢ) + ½Σ_{i≠j} U2(xᵢ, xⱼ), A = -β∂𝒱
        U2 simétrico: cada par no ordenado cuenta una vez
        λ_∂A = β(u1 + (r1-1)u2), κ_∂A = β(κ1 + κ2 (r1-1)√(2(r1-1)))
        """
        if r1 < 1:
            raise ModelValidationError("r1 must be >= 1")
        v = u1_hessian_lb + (r1 - 1) * u2_hessian_lb
        if v <= 0:
            raise ModelValidationError(f"u1 + (r1-1)u2 must be > 0, got {v}")
        if kappa1 < 0 or kappa2 < 0:
            raise ModelValidationError("kappa1 and kappa2 must be nonnegative")
        ModelService._check_positive(beta=beta, sigma1=sigma1)
        beta = float(beta)

        def grad_V(x: np.ndarray) -> np.ndarray:
            g = np.array([U1.grad(xi) for xi in x], dtype=float)
            for i in range(r1):
                for j in range(i + 1, r1):
                    gij = U2.grad(x[i], x[j])
                    g[i] += gij[0]
                    g[j] += gij[1]
            return g

        def hess_V(x: np.ndarray) -> np.ndarray:
            H = np.diag([U1.hess(xi) for xi in x]).astype(float)
            for i in range(r1):
                for j in range(i + 1, r1):
                    Hij = U2.hess(x[i], x[j])
                    H[i, i] += Hij[0, 0]
                    H[j, j] += Hij[1, 1]
                    H[i, j] += Hij[0, 1]
                    H[j, i] += Hij[1, 0]
            return H

        return SignalModel(
            dim=r1,
            drift=lambda x: -beta * grad_V(np.asarray(x, dtype=float)),
            jacobian=lambda x: -beta * hess_V(np.asarray(x, dtype=float)),
            R1=sigma1 ** 2 * np.eye(r1),
            lambda_dA=beta * v,
            kappa_dA=beta * (kappa1 + kappa2 * (r1 - 1) * np.sqrt(2.0 * (r1 - 1))),
            name="interacting",
        )

    @staticmethod
    def fully_observed_sensor(r1: int, b: float = 1.0, sigma2: float = 1.0) -> SensorModel:
        """Sensor B = b·Id, R2 = σ2²·Id"""
        if sigma2 <= 0:
            raise ModelValidationError("sigma2 must be > 0")
        return SensorModel(B=b * np.eye(r1), R2=sigma2 ** 2 * np.eye(r1))

    @staticmethod
    def effective_S(sensor: SensorModel, tol: Optional[float] = None) -> SensorDiagnostics:
        """
        S = B'R2⁻¹B, ρ(S) = λ_max(sym(S))
        Condición (S): S = ρ·Id con ρ > 0, desviación relativa < tol
        """
        tol = settings.CONDITION_S_TOL if tol is None else tol
        S = sensor.S
        rho = float(np.linalg.eigvalsh(S)[-1]) if S.size else 0.0
        flag = False
        if rho > 0.0:
            deviation = float(np.abs(S - rho * np.eye(S.shape[0])).max())
            flag = deviation / rho < tol
        return SensorDiagnostics(S=S, is_condition_S=flag, rho=max(rho, 0.0))

    @staticmethod
    def identity_sensor_transform(problem: FilteringProblem,
                                  lambda_dA: Optional[float] = None,
                                  kappa_dA: Optional[float] = None) -> FilteringProblem:
        """
        Cambio de base 𝒳 = T X con T = R2^{-1/2} B
        𝒜 = T∘A∘T⁻¹, ℛ1 = T R1 T', B = Id, R2 = Id
        """
        sensor = problem.sensor
        signal = problem.signal
        if sensor.r2 != sensor.r1:
            raise DimensionMismatchError("identity sensor transform requires r1 == r2")
        T = sensor.R2_inv_sqrt @ sensor.B
        if np.linalg.matrix_rank(T) < T.shape[0]:
            raise ModelValidationError("R2^{-1/2} B is singular")
        T_inv = np.linalg.inv(T)

        gram = T.T @ T
        c2 = float(np.trace(gram)) / T.shape[0]
        conformal = bool(np.allclose(gram, c2 * np.eye(T.shape[0]), rtol=1e-10, atol=1e-12))
        certified = signal.certified and (conformal or lambda_dA is not None)
        if lambda_dA is None:
            lambda_dA = signal.lambda_dA
            if not conformal:
                logger.warning("Non-conformal sensor transform: lambda_dA copied without certificate")
        if kappa_dA is None:
            kappa_dA = signal.kappa_dA * spectral_norm(T) * spectral_norm(T_inv) ** 2
            certified = certified and conformal

        new_signal = SignalModel(
            dim=signal.dim,
            drift=lambda u: T @ signal.drift(T_inv @ u),
            jacobian=lambda u: T @ signal.jacobian(T_inv @ u) @ T_inv,
            R1=symmetrize(T @ signal.R1 @ T.T),
            lambda_dA=float(lambda_dA),
            kappa_dA=float(kappa_dA),
            lambda_A=signal.lambda_A,
            name=f"{signal.name}-identity-sensor",
            certified=certified,
        )
        r = signal.dim
        return FilteringProblem(
            signal=new_signal,
            sensor=SensorModel(B=np.eye(r), R2=np.eye(r)),
            x0_mean=T @ problem.x0_mean,
            P0=symmetrize(T @ problem.P0 @ T.T),
        )

    @staticmethod
    def sample_signal_path(problem: FilteringProblem, dt: float, T: float,
                           rng: np.random.Generator,
                           x0: Optional[np.ndarray] = None) -> SignalPath:
        """
        Euler-Maruyama X_{k+1} = X_k + A(X_k)dt + R1^{1/2} ΔW_k
        X_0 ~ N(x0_mean, P0) salvo que se fije x0
        """
        n = _n_steps(dt, T)
        signal = problem.signal
        r1 = signal.dim
        if x0 is None:
            x = problem.x0_mean + psd_sqrt(problem.P0) @ rng.standard_normal(r1)
        else:
            x = np.asarray(x0, dtype=float).reshape(r1).copy()
        dW = rng.standard_normal((n, r1)) * np.sqrt(dt)
        states = np.empty((n + 1, r1))
        states[0] = x
        for k in range(n):
            x = x + signal.drift(x) * dt + signal.R1_sqrt @ dW[k]
            states[k + 1] = x
        return SignalPath(times=np.arange(n + 1) * dt, states=states)

    @staticmethod
    def simulate_observations(problem: FilteringProblem, dt: float, T: float,
                              rng: np.random.Generator,
                              x0: Optional[np.ndarray] = None) -> ObservationPath:
        """Verdad oculta y sus incrementos de observación (ruido V tras el de la señal)"""
        path = ModelService.sample_signal_path(problem, dt, T, rng, x0=x0)
        sensor = problem.sensor
        n = path.states.shape[0] - 1
        dV = rng.standard_normal((n, sensor.r2)) * np.sqrt(dt)
        dY = path.states[:-1] @ sensor.B.T * dt + dV @ sensor.R2_sqrt.T
        return ObservationPath(times=path.times, truth=path.states, dY=dY, dt=dt)

    @staticmethod
    def check_signal_invariants(signal: SignalModel, rng: np.random.Generator,
                                samples: Optional[int] = None, scale: float = 3.0) -> InvariantCheck:
        """
        Verificación puntual de los invariantes en puntos aleatorios
        logNorm(∂A + ∂A') <= -λ_∂A; ‖∂A(x) - ∂A(y)‖ <= κ‖x - y‖;
        ⟨x - y, A(x) - A(y)⟩ <= -λ_A‖x - y‖²
        """
        samples = settings.INVARIANT_SAMPLES if samples is None else samples
        r1 = signal.dim
        X = rng.standard_normal((samples, r1)) * scale
        Y = rng.standard_normal((samples, r1)) * scale
        log_excess = lip_excess = one_sided_excess = -np.inf
        for x, y in zip(X, Y):
            Jx = signal.jacobian(x)
            log_excess = max(log_excess, log_norm(Jx + Jx.T) + signal.lambda_dA)
            gap = float(np.linalg.norm(x - y))
            lip = spectral_norm(Jx - signal.jacobian(y)) - signal.kappa_dA * gap
            lip_excess = max(lip_excess, lip)
            inner = float((x - y) @ (signal.drift(x) - signal.drift(y)))
            one_sided_excess = max(one_sided_excess, inner + signal.lambda_A_effective * gap ** 2)
        return InvariantCheck(
            log_norm_excess=float(log_excess),
            lipschitz_excess=float(lip_excess),
            one_sided_excess=float(one_sided_excess),
            samples=samples,
        )

    @staticmethod
    def with_initial_law(problem: FilteringProblem, x0_mean=None, P0=None) -> FilteringProblem:
        """Mismo problema con otra ley inicial"""
        return replace(
            problem,
            x0_mean=problem.x0_mean if x0_mean is None else x0_mean,
            P0=problem.P0 if P0 is None else P0,
        )

    @staticmethod
    def _check_positive(**values: float) -> None:
        for name, value in values.items():
            if value is None or not value > 0:
                raise ModelValidationError(f"{name} must be > 0")
