# tcnn/schemas/metrics.py
"""
Per-epoch training metrics, including the gating and attention-span series of
every GPSA layer.
"""
from typing import Dict, List, Optional

from pydantic import BaseModel, validator

BASE_COLUMNS = ["epoch", "lr", "train_loss", "train_acc", "test_acc"]


class EpochRecord(BaseModel):
    """
    Metrics of one completed epoch.

    Attributes:
        gates (List[List[float]]): sigma(lambda_h) per GPSA layer, per head
        spans (List[List[float]]): 1 / alpha_h per GPSA layer, per head
    """
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float
    gates: List[List[float]] = []
    spans: List[List[float]] = []

    @validator("spans")
    def spans_match_gates(cls, v, values):
        """Both series cover the same layers and heads."""
        gates = values.get("gates", [])
        if [len(layer) for layer in v] != [len(layer) for layer in gates]:
            raise ValueError("gates and spans must have the same layout")
        return v

    @property
    def mean_gates(self) -> List[float]:
        """Per-layer mean of sigma(lambda_h)."""
        return [sum(layer) / len(layer) for layer in self.gates if layer]


class MetricsLog(BaseModel):
    """Ordered epoch records of one or more consecutive training phases."""
    records: List[EpochRecord] = []

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def series(self, field: str) -> List[float]:
        """Per-epoch values of a scalar field."""
        return [getattr(r, field) for r in self.records]

    def gate_series(self, layer: int, head: int) -> List[Optional[float]]:
        return [r.gates[layer][head] if layer < len(r.gates) else None for r in self.records]

    def span_series(self, layer: int, head: int) -> List[Optional[float]]:
        return [r.spans[layer][head] if layer < len(r.spans) else None for r in self.records]

    @property
    def last(self) -> Optional[EpochRecord]:
        return self.records[-1] if self.records else None

    def extend(self, other: "MetricsLog") -> None:
        self.records.extend(other.records)

    def columns(self) -> List[str]:
        """CSV header: base columns then gate_L{i}_H{j} and span_L{i}_H{j}."""
        layout: List[int] = []
        for r in self.records:
            if len(r.gates) > len(layout):
                layout = [len(layer) for layer in r.gates]
        gate_cols = [f"gate_L{i}_H{j}" for i, n in enumerate(layout) for j in range(n)]
        span_cols = [f"span_L{i}_H{j}" for i, n in enumerate(layout) for j in range(n)]
        return BASE_COLUMNS + gate_cols + span_cols

    def rows(self) -> List[Dict[str, object]]:
        """One dict per epoch; GPSA columns are blank before the surgery."""
        rows = []
        for r in self.records:
            row: Dict[str, object] = {"epoch": r.epoch, "lr": r.lr, "train_loss": r.train_loss,
                                      "train_acc": r.train_acc, "test_acc": r.test_acc}
            for i, layer in enumerate(r.gates):
                for j, value in enumerate(layer):
                    row[f"gate_L{i}_H{j}"] = value
                    row[f"span_L{i}_H{j}"] = r.spans[i][j]
            rows.append(row)
        return rows
