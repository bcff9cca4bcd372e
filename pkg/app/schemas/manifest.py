"""
Schemas de manifiestos, veredictos y registro de corridas
"""
from datetime import datetime
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class Violation(BaseModel):
    """Diagnóstico de validación"""
    level: str = Field(..., pattern="^(error|warning)$")
    message: str


class Verdict(BaseModel):
    """Veredicto de una verificación"""
    name: str
    statistic: float
    bound: float
    margin: float
    passed: bool
    seeds: List[int] = Field(default_factory=list)
    details: Dict[str, Any] = Field(default_factory=dict)


class RunManifest(BaseModel):
    """Manifiesto de una corrida (escrito antes que los resultados)"""
    run_key: str
    experiment: str
    seed: int
    config_hash: str
    code_version: str
    per_run_seeds: List[int] = Field(default_factory=list)
    output_dir: str
    output_files: List[str] = Field(default_factory=list)
    status: str = "running"
    blow_up: bool = False
    checks_passed: Optional[bool] = None
    wall_clock_seconds: float = 0.0
    created_at: datetime


class RunFileResponse(BaseModel):
    """Archivo registrado"""
    path: str
    kind: str

    class Config:
        from_attributes = True


class RunResponse(BaseModel):
    """Respuesta del registro de corridas"""
    id: int
    run_key: str
    experiment: str
    seed: str
    config_hash: str
    code_version: str
    status: str
    wall_clock_seconds: Optional[float] = None
    output_dir: str
    created_at: datetime
    finished_at: Optional[datetime] = None
    files: List[RunFileResponse] = Field(default_factory=list)

    class Config:
        from_attributes = True
