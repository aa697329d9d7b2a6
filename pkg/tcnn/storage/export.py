# tcnn/storage/export.py
"""
Result writers: PGM attention maps, metrics and table CSVs, surgery reports.
"""
import csv
import os
from typing import Iterable, List, Sequence

import numpy as np
from pydantic import BaseModel

from tcnn.schemas.metrics import MetricsLog
from tcnn.schemas.reparam import SurgeryReport
from tcnn.utils.logging import logger


def _ensure_parent(path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def to_gray8(values: np.ndarray) -> np.ndarray:
    """Min-max normalize a 2-D map to 0..255; a constant map becomes all zeros."""
    values = np.asarray(values, dtype=np.float64)
    low, high = values.min(), values.max()
    if high - low <= 0:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.round(255.0 * (values - low) / (high - low)).astype(np.uint8)


def write_pgm(path: str, values: np.ndarray) -> None:
    """Binary 8-bit PGM (P5) of a 2-D map."""
    if values.ndim != 2:
        raise ValueError(f"PGM needs a 2-D map, got shape {values.shape}")
    H, W = values.shape
    _ensure_parent(path)
    with open(path, "wb") as f:
        f.write(f"P5\n{W} {H}\n255\n".encode("ascii"))
        f.write(to_gray8(values).tobytes())


def attention_map_name(layer: int, head: int) -> str:
    return f"attn_L{layer}_H{head}.pgm"


def write_attention_maps(directory: str, maps: Sequence[np.ndarray]) -> List[str]:
    """One PGM per head per layer; `maps[i]` is the N_h x H x W stack of layer i."""
    paths = []
    for i, stack in enumerate(maps):
        for h, values in enumerate(stack):
            path = os.path.join(directory, attention_map_name(i, h))
            write_pgm(path, values)
            paths.append(path)
    logger.info(f"Wrote {len(paths)} attention maps to {directory}")
    return paths


def write_metrics_csv(path: str, log: MetricsLog) -> None:
    """One row per epoch: epoch, lr, losses/accuracies, then gate_L{i}_H{j} and span_L{i}_H{j}."""
    _ensure_parent(path)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=log.columns(), restval="")
        writer.writeheader()
        for row in log.rows():
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    logger.info(f"Wrote {len(log)} epochs to {path}")


def write_rows_csv(path: str, rows: Iterable[BaseModel], exclude: Sequence[str] = ()) -> None:
    """Flat CSV of pydantic rows (field order preserved, None as empty)."""
    rows = list(rows)
    _ensure_parent(path)
    with open(path, "w", newline="") as f:
        if not rows:
            return
        fields = [k for k in rows[0].__fields__ if k not in exclude]
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            values = row.dict(include=set(fields))
            writer.writerow({k: "" if values[k] is None else (repr(values[k]) if isinstance(values[k], float)
                                                                else values[k]) for k in fields})
    logger.info(f"Wrote {len(rows)} rows to {path}")


def write_report(base: str, report: SurgeryReport) -> List[str]:
    """`base`.txt (human readable) and `base`.kv (key=value)."""
    _ensure_parent(base)
    paths = [f"{base}.txt", f"{base}.kv"]
    with open(paths[0], "w") as f:
        f.write(report.to_text())
    with open(paths[1], "w") as f:
        f.write(report.to_kv())
    return paths


def read_kv(path: str) -> dict:
    """Parse a key=value file written by write_report or write_run_config."""
    entries = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line and not line.startswith("#") and "=" in line:
                key, value = line.split("=", 1)
                entries[key] = value
    return entries
