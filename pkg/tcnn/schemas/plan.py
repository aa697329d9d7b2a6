# tcnn/schemas/plan.py
"""
Training plan schema and the two reference recipes (from-scratch and fine-tuning).
"""
from typing import Optional, Tuple

from pydantic import BaseModel, root_validator, validator

from tcnn.core.config import Settings

OPTIMIZERS = ("sgd_momentum", "adamw")


class TrainPlan(BaseModel):
    """
    Optimizer, schedule and seed configuration of one training run.

    Attributes:
        optimizer (str): "sgd_momentum" or "adamw"
        max_lr (float): Peak learning rate reached at the end of warmup
        min_lr (float): Learning rate at the last step
        warmup_epochs (int): Linear warmup length
        total_epochs (int): Schedule length
        gating_lr (Optional[float]): Constant learning rate for GPSA gates, None = follow the schedule
        micro_batch (int): Split each batch in chunks of this size for forward/backward (0 = off)
    """
    optimizer: str = "adamw"
    max_lr: float = 1e-4
    min_lr: float = 1e-6
    warmup_epochs: int = 0
    total_epochs: int = 10
    batch_size: int = 64
    micro_batch: int = 0
    weight_decay: float = 0.0
    momentum: float = 0.9
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    drop_rate: float = 0.0
    gating_lr: Optional[float] = 0.1
    label_smoothing: float = 0.0
    hflip: bool = True
    seed: int = 0
    resolution: int = 32

    @validator("optimizer")
    def optimizer_known(cls, v):
        """Validate optimizer kind."""
        if v not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        return v

    @validator("max_lr", "min_lr", "eps")
    def rate_positive(cls, v):
        """Rates are positive."""
        if v <= 0:
            raise ValueError("must be positive")
        return v

    @validator("gating_lr")
    def gating_lr_non_negative(cls, v):
        """Gates may be frozen with 0 but never pushed backwards."""
        if v is not None and v < 0:
            raise ValueError("gating_lr must be non-negative")
        return v

    @validator("weight_decay", "momentum", "label_smoothing")
    def non_negative(cls, v):
        if v < 0:
            raise ValueError("must be non-negative")
        return v

    @validator("warmup_epochs", "total_epochs", "micro_batch")
    def count_non_negative(cls, v):
        if v < 0:
            raise ValueError("must be non-negative")
        return v

    @validator("batch_size", "resolution")
    def size_positive(cls, v):
        if v <= 0:
            raise ValueError("must be positive")
        return v

    @validator("drop_rate")
    def drop_rate_range(cls, v):
        """Stochastic depth rate lies in [0, 1)."""
        if not 0.0 <= v < 1.0:
            raise ValueError("drop_rate must lie in [0, 1)")
        return v

    @root_validator(skip_on_failure=True)
    def schedule_consistent(cls, values):
        """Warmup cannot outlast the schedule and the floor cannot exceed the peak."""
        if values["warmup_epochs"] > values["total_epochs"]:
            raise ValueError("warmup_epochs must not exceed total_epochs")
        if values["min_lr"] > values["max_lr"]:
            raise ValueError("min_lr must not exceed max_lr")
        return values


def scratch_plan(settings: Settings, epochs: Optional[int] = None) -> TrainPlan:
    """From-scratch recipe: SGD with momentum, warmup then cosine decay."""
    total = settings.SCRATCH_EPOCHS if epochs is None else epochs
    return TrainPlan(
        optimizer="sgd_momentum",
        max_lr=settings.SCRATCH_MAX_LR,
        min_lr=settings.SCRATCH_MAX_LR / 100.0,
        warmup_epochs=min(settings.SCRATCH_WARMUP_EPOCHS, total),
        total_epochs=total,
        batch_size=settings.BATCH_SIZE,
        micro_batch=settings.MICRO_BATCH,
        weight_decay=settings.SCRATCH_WEIGHT_DECAY,
        momentum=settings.MOMENTUM,
        drop_rate=settings.DROP_RATE,
        gating_lr=settings.GATING_LR,
        label_smoothing=settings.LABEL_SMOOTHING,
        hflip=settings.HFLIP,
        seed=settings.SEED,
        resolution=settings.RESOLUTION,
    )


def finetune_plan(settings: Settings, epochs: Optional[int] = None) -> TrainPlan:
    """Fine-tuning recipe: AdamW warmed up to FINETUNE_MAX_LR, cosine decay, gating LR 0.1."""
    total = settings.FINETUNE_EPOCHS if epochs is None else epochs
    return TrainPlan(
        optimizer="adamw",
        max_lr=settings.FINETUNE_MAX_LR,
        min_lr=settings.FINETUNE_MAX_LR / 100.0,
        warmup_epochs=min(settings.FINETUNE_WARMUP_EPOCHS, total),
        total_epochs=total,
        batch_size=settings.BATCH_SIZE,
        micro_batch=settings.MICRO_BATCH,
        weight_decay=settings.FINETUNE_WEIGHT_DECAY,
        drop_rate=settings.DROP_RATE,
        gating_lr=settings.GATING_LR,
        label_smoothing=settings.LABEL_SMOOTHING,
        hflip=settings.HFLIP,
        seed=settings.SEED,
        resolution=settings.RESOLUTION,
    )
