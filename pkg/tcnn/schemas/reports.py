# tcnn/schemas/reports.py
"""
Result schemas for gradient checks and the experiment harnesses.
"""
from typing import List, Optional

from pydantic import BaseModel

from tcnn.schemas.metrics import MetricsLog


class GradcheckEntry(BaseModel):
    """Comparison for one input tensor."""
    name: str
    numel: int
    rel_err: float
    abs_err: float


class GradcheckReport(BaseModel):
    """Tape gradient vs. central finite differences."""
    eps: float
    tol: float
    max_rel_err: float
    max_abs_err: float
    passed: bool
    entries: List[GradcheckEntry] = []

    def to_text(self) -> str:
        lines = [f"{e.name:<40} n={e.numel:<6} rel={e.rel_err:.2e} abs={e.abs_err:.2e}" for e in self.entries]
        lines.append(f"max rel err {self.max_rel_err:.2e} (tol {self.tol:.0e}) -> {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


class ExperimentRow(BaseModel):
    """One row of the reparametrization-timing table."""
    name: str
    t1: int
    t2: int
    same_optimizer: bool
    resolution: int
    train_acc: Optional[float] = None
    test_acc: Optional[float] = None
    test_loss: Optional[float] = None
    mean_gate: Optional[float] = None
    seconds: float = 0.0


class LrSweepResult(BaseModel):
    """Fine-tuning dynamics under one maximal learning rate."""
    max_lr: float
    initial_test_acc: float
    min_test_acc: float
    dip_depth: float
    final_test_acc: float
    log: MetricsLog


class EpochSweepRow(BaseModel):
    """Final accuracy after fine-tuning for a given number of epochs."""
    epochs: int
    train_acc: Optional[float] = None
    test_acc: Optional[float] = None
