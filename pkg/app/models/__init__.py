"""
Modelos de base de datos
"""
from app.models.run import Run, RunFile, RunStatus, FileKind

__all__ = [
    "Run",
    "RunFile",
    "RunStatus",
    "FileKind",
]
