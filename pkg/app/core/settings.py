from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.logger import LoggerConfig


class Settings(BaseSettings):
    """Application settings loaded from environment variables (prefix SPECTRAL_DISTILL_)."""

    # Pydantic v2 config
    model_config = SettingsConfigDict(
        env_prefix="SPECTRAL_DISTILL_",
        env_file=str(Path(__file__).parent.parent.parent / ".env"),
        case_sensitive=False,
        extra="ignore",
    )

    # Application
    APP_NAME: str = "spectral-distill"
    APP_VERSION: str = "0.3.0"

    # Numerics
    NODES: int = Field(default=2048, ge=16)          # узлы квадратуры на балке
    RAMP_FRACTION: float = Field(default=1e-3, gt=0.0, lt=0.5)
    PINV_RTOL: float = Field(default=1e-10, gt=0.0)
    THREADS: int = Field(default=1, ge=1)

    # Ridge grid used by searches and dominance checks
    RIDGE_GRID_SIZE: int = Field(default=200, ge=2)
    RIDGE_GRID_MIN: float = Field(default=1e-3, gt=0.0)
    RIDGE_GRID_MAX: float = Field(default=1e3, gt=0.0)

    # Logging
    LOG_LEVEL: str = "WARNING"
    LOG_DIR: str = "logs"
    LOG_TO_FILE: bool = False
    CONSOLE_OUTPUT: bool = True
    USE_JSON: bool = False


settings = Settings()
# --- Инициализация логирования ---
logger_config = LoggerConfig(
    log_dir=settings.LOG_DIR,
    log_file=f"{settings.APP_NAME}.log",
    log_level=settings.LOG_LEVEL,
    console_output=settings.CONSOLE_OUTPUT,
    log_to_file=settings.LOG_TO_FILE,
    use_json=settings.USE_JSON,
)
