"""
Endpoints del calculador de estabilidad
"""
from fastapi import APIRouter, HTTPException

from app.schemas.stability import StabilityReport, StabilityRequest
from app.services.experiment_service import ExperimentService
from app.utils.exceptions import BucyLabError

router = APIRouter()


@router.post("/report", response_model=StabilityReport)
def stability_report(request: StabilityRequest):
    """Razones, exponentes y condiciones de un modelo"""
    try:
        return ExperimentService.stability_report(request)
    except BucyLabError as exc:
        raise HTTPException(status_code=exc.status_code, detail=str(exc))
