"""
Servicio del registro de corridas
"""
from datetime import datetime, timezone
from typing import List, Optional

from fastapi import HTTPException
from sqlalchemy.orm import Session

from app.models.run import FileKind, Run, RunFile, RunStatus
from app.schemas.manifest import RunManifest


def _file_kind(path: str) -> FileKind:
    if path.endswith("manifest.json"):
        return FileKind.MANIFEST
    if path.endswith(".csv"):
        return FileKind.CSV
    if path.endswith(".json"):
        return FileKind.JSON
    return FileKind.TEXT


class RunRegistryService:
    """Servicio para indexar corridas en la base de datos"""

    @staticmethod
    def register_run(db: Session, manifest: RunManifest) -> Run:
        """Registrar una corrida en curso"""
        run = Run(
            run_key=manifest.run_key,
            experiment=manifest.experiment,
            seed=str(manifest.seed),
            config_hash=manifest.config_hash,
            code_version=manifest.code_version,
            status=RunStatus.RUNNING,
            output_dir=manifest.output_dir,
        )
        db.add(run)
        db.commit()
        db.refresh(run)
        return run

    @staticmethod
    def finish_run(db: Session, run_id: int, manifest: RunManifest) -> Run:
        """Cerrar la corrida con su estado y archivos"""
        run = db.query(Run).filter(Run.id == run_id).first()
        if not run:
            raise HTTPException(status_code=404, detail="Corrida no encontrada")
        run.status = RunStatus(manifest.status)
        run.wall_clock_seconds = manifest.wall_clock_seconds
        run.finished_at = datetime.now(timezone.utc)
        run.files = [RunFile(path=path, kind=_file_kind(path)) for path in manifest.output_files]
        db.commit()
        db.refresh(run)
        return run

    @staticmethod
    def list_runs(db: Session, experiment: Optional[str] = None, limit: int = 100) -> List[Run]:
        """Corridas más recientes primero"""
        query = db.query(Run)
        if experiment:
            query = query.filter(Run.experiment == experiment)
        return query.order_by(Run.id.desc()).limit(limit).all()

    @staticmethod
    def get_run(db: Session, run_id: int) -> Run:
        run = db.query(Run).filter(Run.id == run_id).first()
        if not run:
            raise HTTPException(status_code=404, detail="Corrida no encontrada")
        return run
