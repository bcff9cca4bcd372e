"""
Schemas Pydantic para validación de documentos y API
"""
from app.schemas.config import (
    ExperimentConfig, ExperimentKind, ModelFamily, ModelBlock, SensorBlock,
    InitialBlock, NumericsBlock, EnsembleBlock, StudyBlock
)
from app.schemas.manifest import Violation, Verdict, RunManifest, RunResponse, RunFileResponse
from app.schemas.stability import StabilityReport, StabilityRequest

__all__ = [
    "ExperimentConfig", "ExperimentKind", "ModelFamily", "ModelBlock", "SensorBlock",
    "InitialBlock", "NumericsBlock", "EnsembleBlock", "StudyBlock",
    "Violation", "Verdict", "RunManifest", "RunResponse", "RunFileResponse",
    "StabilityReport", "StabilityRequest",
]
