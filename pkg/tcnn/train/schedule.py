# tcnn/train/schedule.py
import math

from tcnn.schemas.plan import TrainPlan


def lr_at(step: int, plan: TrainPlan, steps_per_epoch: int = 1) -> float:
    """
    Learning rate at optimizer step `step` (0-based).

    Linear warmup from 0 to max_lr over the warmup steps, then cosine decay that
    reaches min_lr exactly at the last step of the schedule.
    """
    warmup = plan.warmup_epochs * steps_per_epoch
    last = plan.total_epochs * steps_per_epoch - 1
    if step < warmup:
        return plan.max_lr * step / warmup
    if step >= last or last <= warmup:
        return plan.min_lr if step >= last else plan.max_lr
    progress = (step - warmup) / (last - warmup)
    return plan.min_lr + 0.5 * (plan.max_lr - plan.min_lr) * (1.0 + math.cos(math.pi * progress))
