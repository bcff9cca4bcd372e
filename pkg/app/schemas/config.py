"""
Schemas del documento de experimento
"""
import enum
from typing import Annotated, List, Optional

from pydantic import BaseModel, Field, model_validator

from app.config import settings

Matrix = List[List[float]]
PositiveInt = Annotated[int, Field(ge=1)]


class ExperimentKind(str, enum.Enum):
    """Experimentos disponibles"""
    STABILITY_REPORT = "stability-report"
    EKF_RUN = "ekf-run"
    ENKF_RUN = "enkf-run"
    MCKEAN_CONSISTENCY = "mckean-consistency"
    CONTRACTION_STUDY = "contraction-study"
    FLUCTUATION_CHECK = "fluctuation-check"
    CHAOS_STUDY = "chaos-study"
    CONCENTRATION_CHECK = "concentration-check"
    DIVERGENCE_PROBE = "divergence-probe"


class ModelFamily(str, enum.Enum):
    """Familias de señal"""
    QUADRATIC = "quadratic"
    CUBIC = "cubic"
    INTERACTING = "interacting"
    LINEAR = "linear"


class ModelBlock(BaseModel):
    """Bloque de señal"""
    family: ModelFamily
    dim: Optional[int] = Field(None, ge=1)
    Q1: Optional[Matrix] = None
    Q2: Optional[Matrix] = None
    q: Optional[List[float]] = None
    A: Optional[Matrix] = None
    R1: Optional[Matrix] = None
    beta: float = Field(1.0, gt=0)
    sigma1: float = Field(1.0, gt=0)

    # Potenciales con interacción
    u1: float = 1.0
    u2: float = 0.0
    kappa1: float = Field(0.0, ge=0)
    kappa2: float = Field(0.0, ge=0)
    coupling: float = Field(0.0, ge=0)

    lambda_A: Optional[float] = Field(None, gt=0)

    class Config:
        extra = "forbid"


class SensorBlock(BaseModel):
    """Bloque de sensor: (b, σ2) o (B, R2) completos"""
    b: float = 1.0
    sigma2: float = Field(1.0, gt=0)
    B: Optional[Matrix] = None
    R2: Optional[Matrix] = None
    identity_transform: bool = False

    class Config:
        extra = "forbid"


class InitialBlock(BaseModel):
    """Ley inicial N(x0_mean, P0)"""
    x0_mean: Optional[List[float]] = None
    P0: Optional[Matrix] = None
    p0_scale: float = Field(1.0, ge=0)

    class Config:
        extra = "forbid"


class NumericsBlock(BaseModel):
    """Malla temporal"""
    dt: float = Field(default_factory=lambda: settings.DEFAULT_DT, gt=0)
    T: float = Field(10.0, gt=0)
    t_burn: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def check_horizon(self):
        if self.T < self.dt:
            raise ValueError("T must be >= dt")
        if self.t_burn > self.T:
            raise ValueError("t_burn must be <= T")
        return self

    class Config:
        extra = "forbid"


class EnsembleBlock(BaseModel):
    """Tamaños de ensamble, inflación y repeticiones"""
    N: List[PositiveInt] = Field(default_factory=lambda: [100], min_length=1)
    theta: float = Field(0.0, ge=0)
    M: int = Field(1, ge=1)
    copies: int = Field(10000, ge=2)

    class Config:
        extra = "forbid"


class StudyBlock(BaseModel):
    """Parámetros de las verificaciones"""
    delta: float = Field(3.0, ge=0)
    times: List[float] = Field(default_factory=list)
    paths: int = Field(1, ge=1)
    matched: bool = True
    mean_shift: float = 1.0
    p0_ratio: float = Field(2.0, gt=0)
    truth_offset: float = 0.5
    epsilon: float = Field(0.25, ge=0, lt=1)
    binomial_slack: float = Field(0.02, ge=0)

    class Config:
        extra = "forbid"


class ExperimentConfig(BaseModel):
    """Documento de experimento"""
    experiment: ExperimentKind
    model: ModelBlock
    sensor: SensorBlock = Field(default_factory=SensorBlock)
    initial: InitialBlock = Field(default_factory=InitialBlock)
    numerics: NumericsBlock = Field(default_factory=NumericsBlock)
    ensemble: EnsembleBlock = Field(default_factory=EnsembleBlock)
    study: StudyBlock = Field(default_factory=StudyBlock)
    seed: int = Field(..., ge=0, lt=2 ** 64)
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def check_study_times(self):
        for t in self.study.times:
            if t < 0 or t > self.numerics.T:
                raise ValueError(f"study time {t} outside [0, T]")
        return self

    class Config:
        extra = "forbid"
