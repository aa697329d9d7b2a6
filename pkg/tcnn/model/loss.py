# tcnn/model/loss.py
import numpy as np

from tcnn.core.exceptions import DataError, DimensionError
from tcnn.tensor import functional as F
from tcnn.tensor.tensor import Tensor


def cross_entropy(logits: Tensor, labels, smoothing: float = 0.0) -> Tensor:
    """
    Mean negative log-likelihood of the labels, optionally label-smoothed.

    Args:
        logits (Tensor): B x K
        labels: B integer labels in [0, K)
        smoothing (float): Mass spread uniformly over the K classes

    Raises:
        DataError: If a label is out of range
    """
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError("Logits must be B x K with B labels", detail=f"{logits.shape} vs {labels.shape}")
    B, K = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise DataError("Label out of range", detail=f"labels must lie in [0, {K})")
    target = np.full((B, K), smoothing / K, dtype=logits.dtype)
    target[np.arange(B), labels.astype(np.int64)] += 1.0 - smoothing
    return -(F.log_softmax(logits, axis=1) * Tensor(target, dtype=logits.dtype)).sum() / float(B)


def accuracy(logits: Tensor, labels) -> float:
    return float(np.mean(np.argmax(logits.data, axis=1) == np.asarray(labels)))
