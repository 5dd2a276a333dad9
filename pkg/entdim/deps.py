"""
Dependencies and configuration for entdim
"""
import json
import logging
import os
import sys
from typing import List, Union

import structlog
from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings"""

    # Conic solver
    solver: str = "auto"
    feas_tol: float = 1e-8
    gap_tol: float = 1e-7
    max_iter: int = 100_000

    # Protocol extraction
    zero_threshold: float = 1e-5
    cleaning_tolerance: float = 1e-4
    witness_slack: float = 1e-6

    # Statistics
    significance: float = 0.01
    oracle_samples: int = 2000

    # Benchmark
    bench_states: int = 200
    bench_workers: int = 1
    bench_chunksize: int = Field(default=1, ge=1)
    bench_families: List[str] = ["unf", "gell_mann"]

    # File storage
    output_directory: str = "./results"

    # Logging
    log_level: str = "INFO"
    log_json: bool = False

    model_config = SettingsConfigDict(env_prefix="ENTDIM_", env_file=".env", extra="ignore")

    @field_validator("solver", "log_level", mode="before")
    @classmethod
    def normalize_upper(cls, v: str) -> str:
        """Solver names and log levels are case-insensitive"""
        if isinstance(v, str):
            v = v.strip()
            return v if v.lower() == "auto" else v.upper()
        return v

    @field_validator("bench_families", mode="before")
    @classmethod
    def parse_families(cls, v: Union[str, List[str]]) -> List[str]:
        """
        Accept a JSON list '["unf","gell_mann"]' or a comma separated string 'unf,gell_mann'
        """
        if isinstance(v, list):
            return v

        if isinstance(v, str):
            if v.strip().startswith("["):
                try:
                    return json.loads(v)
                except json.JSONDecodeError:
                    pass
            return [i.strip() for i in v.split(",") if i.strip()]

        return v


# Global settings instance
settings = Settings()


def configure_logging(level: str = None, json_output: bool = None) -> None:
    """Route structlog output to stderr so stdout stays machine-readable"""
    level = (level or settings.log_level).upper()
    json_output = settings.log_json if json_output is None else json_output

    renderer = structlog.processors.JSONRenderer() if json_output else structlog.dev.ConsoleRenderer(colors=False)
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(logging.getLevelName(level)),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )


def create_output_directory(path: str = None) -> str:
    """Create the results directory if it doesn't exist"""
    path = path or settings.output_directory
    os.makedirs(path, exist_ok=True)
    return path
