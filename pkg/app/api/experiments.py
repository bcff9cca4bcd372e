"""
Endpoints de experimentos y registro de corridas
"""
from typing import List, Optional

from fastapi import APIRouter, Depends, HTTPException
from sqlalchemy.orm import Session

from app.database import get_db
from app.schemas.config import ExperimentConfig
from app.schemas.manifest import RunManifest, RunResponse, Violation
from app.services.experiment_service import ExperimentService
from app.services.registry_service import RunRegistryService
from app.utils.exceptions import BucyLabError

router = APIRouter()


@router.post("/validate", response_model=List[Violation])
def validate_experiment(config: ExperimentConfig):
    """Diagnósticos sin ejecutar"""
    return ExperimentService.validate(config)


@router.post("/run", response_model=RunManifest)
def run_experiment(
    config: ExperimentConfig,
    check: bool = False,
    db: Session = Depends(get_db)
):
    """Ejecutar un experimento pequeño de forma síncrona"""
    try:
        return ExperimentService.run(config, check=check, db=db)
    except BucyLabError as exc:
        raise HTTPException(status_code=exc.status_code, detail=str(exc))


@router.get("/runs", response_model=List[RunResponse])
def list_runs(
    experiment: Optional[str] = None,
    limit: int = 100,
    db: Session = Depends(get_db)
):
    """Corridas registradas"""
    return RunRegistryService.list_runs(db, experiment=experiment, limit=limit)


@router.get("/runs/{run_id}", response_model=RunResponse)
def get_run(run_id: int, db: Session = Depends(get_db)):
    """Corrida con su lista de archivos"""
    return RunRegistryService.get_run(db, run_id)
