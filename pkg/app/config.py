"""
Configuración de la aplicación
"""
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Configuración de la aplicación"""

    # Database (registro de corridas)
    DATABASE_URL: str = "sqlite:///./data/bucy_lab.db"

    # App
    APP_NAME: str = "Bucy Lab"
    VERSION: str = "1.0.0"
    DEBUG: bool = False
    LOG_LEVEL: str = "INFO"

    # Experimentos
    OUTPUT_DIR: str = "./runs"
    MAX_WORKERS: int = 1
    DEFAULT_DT: float = 1e-3

    # Numérica y verificaciones
    CONDITION_S_TOL: float = 1e-10
    QV_Z_THRESHOLD: float = 4.0
    CSV_SIGNIFICANT_DIGITS: int = 17
    INVARIANT_SAMPLES: int = 200

    class Config:
        env_file = ".env"
        case_sensitive = True


settings = Settings()
