import os
from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # Worker cap for oracle chunks, audit sampling and the paired inner solves
    threads: Optional[int] = Field(None, alias="CVHI_THREADS")

    # Logging
    log_level: str = Field("INFO", alias="LOG_LEVEL")

    # Near-kink classification of max-of-smooth pieces
    activity_tol: float = Field(1e-9, alias="CVHI_ACTIVITY_TOL")

    # Certificates
    gap_tol: float = Field(1e-7, alias="CVHI_GAP_TOL")
    multistarts: int = Field(8, alias="CVHI_MULTISTARTS")

    # Prometheus endpoint (disabled when unset)
    metrics_port: Optional[int] = Field(None, alias="CVHI_METRICS_PORT")

    # Bundled problem files
    suite_dir: str = Field("data/suite", alias="CVHI_SUITE_DIR")

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        extra='ignore'
    )

    @property
    def worker_count(self) -> int:
        if self.threads is not None and self.threads > 0:
            return int(self.threads)
        return os.cpu_count() or 1
