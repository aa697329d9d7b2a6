# tcnn/schemas/model.py
"""
Pydantic schemas describing mini-ResNet architectures.
"""
from typing import List, Optional

from pydantic import BaseModel, validator

from tcnn.core.exceptions import ConfigError

BLOCK_KINDS = ("basic", "bottleneck")


class StageSpec(BaseModel):
    """One stage of residual blocks."""
    blocks: int
    channels: int
    stride: int = 1
    kind: str = "basic"

    @validator("blocks", "channels")
    def positive(cls, v):
        """Counts must be positive."""
        if v <= 0:
            raise ValueError("must be positive")
        return v

    @validator("stride")
    def stride_allowed(cls, v):
        """Stages either keep or halve the resolution."""
        if v not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        return v

    @validator("kind")
    def kind_known(cls, v):
        """Validate block kind."""
        if v not in BLOCK_KINDS:
            raise ValueError(f"block kind must be one of {BLOCK_KINDS}")
        return v


class ModelConfig(BaseModel):
    """Full description of a CNN that build_cnn can instantiate."""
    stages: List[StageSpec]
    input_channels: int = 3
    n_classes: int = 10
    stem_channels: int = 16
    resolution: int = 32
    drop_rate: float = 0.0
    seed: int = 0
    dtype: str = "f32"

    @validator("stages")
    def stages_not_empty(cls, v):
        """A network needs at least one stage."""
        if not v:
            raise ValueError("at least one stage is required")
        return v

    @validator("input_channels", "n_classes", "stem_channels", "resolution")
    def positive(cls, v):
        """Sizes must be positive."""
        if v <= 0:
            raise ValueError("must be positive")
        return v

    @validator("drop_rate")
    def drop_rate_range(cls, v):
        """Stochastic depth rate lies in [0, 1)."""
        if not 0.0 <= v < 1.0:
            raise ValueError("drop_rate must lie in [0, 1)")
        return v

    @validator("dtype")
    def dtype_known(cls, v):
        """Validate precision."""
        if v not in ("f32", "f64"):
            raise ValueError("dtype must be f32 or f64")
        return v


def reference_config(name: str, kind: str = "basic", n_classes: int = 10, input_channels: int = 3,
                     resolution: Optional[int] = None, seed: int = 0, drop_rate: float = 0.0,
                     dtype: str = "f32") -> ModelConfig:
    """
    Desk-scale reference architectures.

    `tiny`: 2 stages of 2 blocks, 16 -> 32 channels, 32x32 input.
    `small`: 3 stages of 2 blocks, 16 -> 32 -> 64 channels, 32x32 input.
    """
    if name == "tiny":
        stages = [StageSpec(blocks=2, channels=16, stride=1, kind=kind),
                  StageSpec(blocks=2, channels=32, stride=2, kind=kind)]
    elif name == "small":
        stages = [StageSpec(blocks=2, channels=16, stride=1, kind=kind),
                  StageSpec(blocks=2, channels=32, stride=2, kind=kind),
                  StageSpec(blocks=2, channels=64, stride=2, kind=kind)]
    else:
        raise ConfigError("Unknown reference model config", detail=name)
    return ModelConfig(stages=stages, input_channels=input_channels, n_classes=n_classes,
                       stem_channels=16, resolution=resolution or 32, seed=seed,
                       drop_rate=drop_rate, dtype=dtype)
