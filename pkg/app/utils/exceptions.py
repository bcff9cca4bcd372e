"""
Errores del dominio
"""


class BucyLabError(Exception):
    """Error base de la aplicación"""

    exit_code = 1
    status_code = 422


class ModelValidationError(BucyLabError):
    """Bloque de modelo inválido (matrices no definidas positivas, v <= 0, ...)"""

    exit_code = 2


class DimensionMismatchError(BucyLabError):
    """Dimensiones inconsistentes entre señal, sensor y observaciones"""

    exit_code = 2


class TimeMismatchError(BucyLabError):
    """Estados comparados en tiempos distintos"""


class ConfigError(BucyLabError):
    """Documento de experimento inválido"""

    exit_code = 2


class ParameterError(BucyLabError, ValueError):
    """Argumento fuera de dominio (delta < 0, tamaños distintos, ...)"""

    exit_code = 2


class ConditionNotApplicableError(BucyLabError):
    """La condición solo está enunciada para rho(S) = 1"""


class NumericalBlowUp(BucyLabError):
    """Estado no finito durante la integración"""

    exit_code = 3
    status_code = 409
