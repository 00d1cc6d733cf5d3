"""
Runtime Configuration
Using Pydantic Settings for type-safe configuration

Per-run physics lives in the run configuration file (ksns.api.config_file);
these settings cover the process: logging, worker threads and report thresholds.
"""

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Runtime settings with environment variable support (prefix KSNS_)
    """

    # Application
    LOG_LEVEL: str = Field("INFO")

    # Worker threads for independent runs inside sweeps and scans
    WORKERS: int = Field(1, ge=1)

    # A priori report thresholds
    CEILING_FACTOR: float = Field(10.0, gt=0.0)
    CEILING_FLOOR: float = Field(1.0, ge=0.0)
    FIT_R2_MIN: float = Field(0.99, gt=0.0, le=1.0)
    CONSERVATION_RTOL: float = Field(1e-12, gt=0.0)
    SIGNAL_MASS_ATOL: float = Field(1e-10, ge=0.0)
    DIVERGENCE_TOL: float = Field(1e-8, gt=0.0)

    # Experiment thresholds
    SWEEP_TOLERANCE: float = Field(0.10, ge=0.0)
    RESIDUAL_TOL: float = Field(0.5, gt=0.0)

    model_config = SettingsConfigDict(
        env_prefix="KSNS_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v):
        """Validate log level"""
        allowed = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if v.upper() not in allowed:
            raise ValueError(f"LOG_LEVEL must be one of {allowed}")
        return v.upper()


# Create settings instance
settings = Settings()


def get_settings() -> Settings:
    """Get settings instance"""
    return settings


__all__ = ["settings", "Settings", "get_settings"]
