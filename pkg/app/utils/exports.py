"""
Exportación de resultados a CSV y JSON
"""
import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable, List, Sequence

import numpy as np

from app.config import settings


def format_value(value: Any) -> str:
    """Formato CSV: flotantes con precisión doble completa, booleanos 0/1"""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), f".{settings.CSV_SIGNIFICANT_DIGITS}g")
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Escribir un CSV con encabezado"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    return path


def to_jsonable(value: Any) -> Any:
    """Convierte numpy e infinitos a tipos JSON ("inf", "-inf", "nan")"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


def write_json(path: Path, payload: Any) -> Path:
    """Escribir JSON ordenado e indentado"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as handle:
        json.dump(to_jsonable(payload), handle, indent=2, sort_keys=True)
        handle.write("\n")
    return path


def matrix_rows(times: np.ndarray, *columns: np.ndarray) -> List[list]:
    """Une columnas por tiempo: cada argumento es (n,) o (n, k)"""
    blocks = [np.asarray(times, dtype=float).reshape(-1, 1)]
    for column in columns:
        column = np.asarray(column)
        blocks.append(column.reshape(column.shape[0], -1))
    return np.concatenate(blocks, axis=1).tolist()
