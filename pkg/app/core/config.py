# app/core/config.py

from typing import Optional

from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

load_dotenv()


class Settings(BaseSettings):
    # =========================
    # Application
    # =========================
    APP_NAME: str = "BlochBands"
    VERSION: str = "1.0.0"
    DEBUG: bool = False
    HOST: str = "0.0.0.0"
    PORT: int = 8000

    # =========================
    # Logging
    # =========================
    LOG_LEVEL: str = "INFO"

    # =========================
    # Numerics
    # =========================
    # Largest dimension handed to the dense generalized eigensolver
    # (test oracle and coarsest-level direct solve of nested iteration).
    ORACLE_MAX_DIM: int = 2000

    # Seed for random initial bases when a run config does not set one
    SEED: int = 42

    # Maximum worker threads for scan rows; overrides the run config key
    THREADS: Optional[int] = None

    # =========================
    # HTTP service
    # =========================
    # Largest finest grid (in cells) a single /solve request may ask for
    MAX_API_CELLS: int = 256 * 256

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="BLOCHBANDS_",
        case_sensitive=True,
        extra="ignore",
    )


settings = Settings()
