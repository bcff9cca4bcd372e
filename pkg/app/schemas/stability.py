"""
Schemas del reporte de estabilidad
"""
import math
from typing import List, Optional

from pydantic import BaseModel, Field, field_serializer

from app.schemas.config import InitialBlock, ModelBlock, SensorBlock


def _finite_or_label(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


class StabilityReport(BaseModel):
    """Razones de estabilidad, exponentes y veredictos de las condiciones"""
    # Constantes de la señal
    lambda_dA: float
    kappa_dA: float
    lambda_A: float
    certified: bool = True

    # Sensor y ruido
    r1: int
    rho_S: float
    tr_R: float
    observable: bool

    # Razones (None si el sensor no es observable)
    lambda_S: Optional[float] = None
    lambda_R: float
    lambda_K: float
    lambda_RS: Optional[float] = None
    lambda_hat_ratio: Optional[float] = None
    lambda_hat_dA: Optional[float] = None
    delta_S: Optional[float] = None
    delta_S_prime: Optional[float] = None
    delta_RS: Optional[float] = None

    # Condiciones
    cond_S: bool
    cond_20: bool
    cond_21: Optional[bool] = None
    sufficient_20: bool = False
    trace_cond_rhs: Optional[float] = None
    trace_cond_ok: Optional[bool] = None
    chi2_delta: float = 1.0
    chi2_ok: bool

    # Exponentes y radios
    Lambda_minus_Gamma: float
    confidence_radius: Optional[float] = None
    confidence_radius_expanded: Optional[float] = None

    notes: List[str] = Field(default_factory=list)

    @field_serializer("lambda_R", "lambda_K", "lambda_RS", "lambda_S")
    def serialize_unbounded(self, value):
        return _finite_or_label(value)

    class Config:
        from_attributes = True


class StabilityRequest(BaseModel):
    """Bloques de modelo, sensor y ley inicial para el reporte"""
    model: ModelBlock
    sensor: SensorBlock = Field(default_factory=SensorBlock)
    initial: InitialBlock = Field(default_factory=InitialBlock)
    chi2_delta: float = Field(1.0, gt=0)

    class Config:
        extra = "forbid"

