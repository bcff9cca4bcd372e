"""
Modelos del registro de corridas
"""
from sqlalchemy import Column, Integer, String, Float, DateTime, ForeignKey, Enum
from sqlalchemy.sql import func
from sqlalchemy.orm import relationship
import enum
from app.database import Base


class RunStatus(str, enum.Enum):
    """Estado de una corrida"""
    RUNNING = "running"
    OK = "ok"
    BLOW_UP = "blow_up"
    CHECK_FAILED = "check_failed"
    ERROR = "error"


class FileKind(str, enum.Enum):
    """Tipo de archivo emitido"""
    CSV = "csv"
    JSON = "json"
    TEXT = "text"
    MANIFEST = "manifest"


class Run(Base):
    """Corrida de experimento (índice; el manifest.json en disco es la fuente)"""

    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    run_key = Column(String, nullable=False, index=True)
    experiment = Column(String, nullable=False)
    seed = Column(String, nullable=False)  # 64 bits sin signo no caben en INTEGER de SQLite
    config_hash = Column(String, nullable=False)
    code_version = Column(String, nullable=False)
    status = Column(Enum(RunStatus), default=RunStatus.RUNNING, nullable=False)
    wall_clock_seconds = Column(Float, nullable=True)
    output_dir = Column(String, nullable=False)

    created_at = Column(DateTime(timezone=True), server_default=func.now())
    finished_at = Column(DateTime(timezone=True), nullable=True)

    files = relationship("RunFile", back_populates="run", cascade="all, delete-orphan")


class RunFile(Base):
    """Archivo emitido por una corrida"""

    __tablename__ = "run_files"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey("runs.id"), nullable=False)
    path = Column(String, nullable=False)
    kind = Column(Enum(FileKind), nullable=False)

    run = relationship("Run", back_populates="files")
