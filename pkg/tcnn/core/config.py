# tcnn/core/config.py
"""
Application configuration module.
Contains settings and configuration variables for every workflow.

Values are resolved in this order (later wins): field defaults, environment
variables (a `.env` file is honoured too), a flat key=value config file, and
explicit overrides coming from command-line flags.
"""
import os
from typing import Any, Mapping, Optional

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseSettings, ValidationError, validator

from tcnn.core.exceptions import ConfigError

# Load environment variables
load_dotenv()

# keys written by write_run_config that are records, not settings
RUN_KEY_PREFIX = "RUN_"


class Settings(BaseSettings):
    # ------ Project ------
    PROJECT_NAME: str = "Transformed CNN toolkit"

    # ------ Numerics ------
    DTYPE: str = "f32"  # values: f32 / f64
    SEED: int = 0

    # ------ Data ------
    DATASET: str = "synthetic"  # values: synthetic / cifar10
    DATA_DIR: str = "./data/cifar-10-batches-bin"
    TRAIN_SIZE: int = 8000
    TEST_SIZE: int = 2000
    RESOLUTION: int = 32
    N_CLASSES: int = 10

    # ------ Model ------
    MODEL_CONFIG: str = "tiny"  # values: tiny / small
    BLOCK_KIND: str = "basic"  # values: basic / bottleneck

    # ------ GPSA ------
    SOFTPLUS_BETA: float = 5.0
    CONTENT_SCALE: bool = True
    STRICT_ALPHA: float = 20.0
    STRICT_LAMBDA: float = 20.0
    PAPER_ALPHA: float = 1.0
    PAPER_LAMBDA: float = 1.0

    # ------ Training ------
    BATCH_SIZE: int = 64
    MICRO_BATCH: int = 0  # 0 = whole batch in one pass
    EVAL_BATCH_SIZE: int = 50
    SCRATCH_EPOCHS: int = 40
    SCRATCH_MAX_LR: float = 0.05
    SCRATCH_WARMUP_EPOCHS: int = 5
    SCRATCH_WEIGHT_DECAY: float = 5e-4
    MOMENTUM: float = 0.9
    FINETUNE_EPOCHS: int = 10
    FINETUNE_MAX_LR: float = 1e-4
    FINETUNE_WARMUP_EPOCHS: int = 2
    FINETUNE_WEIGHT_DECAY: float = 0.05
    GATING_LR: float = 0.1
    DROP_RATE: float = 0.0
    LABEL_SMOOTHING: float = 0.0
    HFLIP: bool = True

    # ------ Verification ------
    PROBES: int = 100
    PROBE_BATCH: int = 4
    VERIFY_TOL: float = 1e-3

    # ------ Logging ------
    LOG_LEVEL: str = "INFO"
    LOG_FILE: Optional[str] = None

    # ------ Outputs ------
    OUTPUT_DIR: str = "./runs"

    @validator("DTYPE")
    def dtype_known(cls, v):
        """Only single and double precision are supported."""
        if v not in ("f32", "f64"):
            raise ValueError("DTYPE must be f32 or f64")
        return v

    @validator("DATASET")
    def dataset_known(cls, v):
        """Validate dataset name."""
        if v not in ("synthetic", "cifar10"):
            raise ValueError("DATASET must be synthetic or cifar10")
        return v

    @validator("MODEL_CONFIG")
    def model_config_known(cls, v):
        """Validate reference model name."""
        if v not in ("tiny", "small"):
            raise ValueError("MODEL_CONFIG must be tiny or small")
        return v

    @validator("BLOCK_KIND")
    def block_kind_known(cls, v):
        """Validate residual block kind."""
        if v not in ("basic", "bottleneck"):
            raise ValueError("BLOCK_KIND must be basic or bottleneck")
        return v

    @validator("TRAIN_SIZE", "TEST_SIZE", "RESOLUTION", "N_CLASSES", "BATCH_SIZE",
               "EVAL_BATCH_SIZE", "PROBES", "PROBE_BATCH")
    def strictly_positive(cls, v):
        """Sizes and counts must be positive."""
        if v <= 0:
            raise ValueError("must be positive")
        return v

    @validator("DROP_RATE")
    def drop_rate_range(cls, v):
        """Stochastic depth rate must lie in [0, 1)."""
        if not 0.0 <= v < 1.0:
            raise ValueError("DROP_RATE must lie in [0, 1)")
        return v

    @validator("LOG_LEVEL")
    def log_level_known(cls, v):
        """Validate logging level name."""
        v = v.upper()
        if v not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError("unknown LOG_LEVEL")
        return v

    @property
    def numpy_dtype(self) -> str:
        """Returns the numpy dtype name for DTYPE"""
        return "float64" if self.DTYPE == "f64" else "float32"

    class Config:
        case_sensitive = True


def load_settings(config_file: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> Settings:
    """
    Build settings from defaults, environment, a key=value file and overrides.

    Args:
        config_file (Optional[str]): Path to a flat key=value file
        overrides (Optional[Mapping[str, Any]]): Values that win over everything else

    Returns:
        Settings: Validated settings

    Raises:
        ConfigError: If the file is missing, a key is unknown or a value is invalid
    """
    values: dict = {}
    if config_file:
        if not os.path.isfile(config_file):
            raise ConfigError("Config file not found", detail=config_file)
        for key, value in dotenv_values(config_file).items():
            if key.startswith(RUN_KEY_PREFIX):
                continue
            if value is None:
                raise ConfigError("Config entry without value", detail=key)
            values[key] = value
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return Settings(**values)
    except ValidationError as e:
        keys = ", ".join(str(err["loc"][0]) for err in e.errors())
        raise ConfigError("Invalid settings", detail=f"{keys}: {e}")


#  global settings object
settings = Settings()


def write_run_config(path: str, settings: Settings, extra: Optional[Mapping[str, Any]] = None) -> None:
    """
    Record every effective setting as a sorted key=value file.

    Extra keys (normalization constants, command, ...) are prefixed with `RUN_`
    so the file can be read back by load_settings.
    """
    entries = {key: value for key, value in settings.dict().items() if value is not None}
    for key, value in (extra or {}).items():
        entries[key if key.startswith(RUN_KEY_PREFIX) else RUN_KEY_PREFIX + key] = value
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w") as f:
        for key in sorted(entries):
            f.write(f"{key}={entries[key]}\n")
