# tcnn/tensor/gradcheck.py
"""
Finite-difference verification of tape gradients.
"""
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from tcnn.core.exceptions import UsageError
from tcnn.schemas.reports import GradcheckEntry, GradcheckReport
from tcnn.tensor.tensor import Tensor, no_grad
from tcnn.utils.logging import logger

# (eps, tol) per precision
DEFAULTS = {np.dtype(np.float32): (1e-3, 1e-3), np.dtype(np.float64): (1e-5, 1e-5)}
TINY = 1e-30

Inputs = Union[Tensor, Sequence[Tensor], Mapping[str, Tensor]]


def _named(at: Inputs) -> Dict[str, Tensor]:
    if isinstance(at, Tensor):
        return {"input": at}
    if isinstance(at, Mapping):
        return dict(at)
    return {f"input{i}": t for i, t in enumerate(at)}


def _scalar(f: Callable[..., Tensor], tensors: List[Tensor]) -> Tensor:
    out = f(*tensors)
    if not isinstance(out, Tensor):
        out = Tensor(np.asarray(out, dtype=tensors[0].dtype))
    if out.size != 1:
        raise UsageError("gradcheck needs a scalar-valued function", detail=f"got shape {out.shape}")
    return out


def gradcheck(f: Callable[..., Tensor], at: Inputs, eps: Optional[float] = None,
              tol: Optional[float] = None) -> GradcheckReport:
    """
    Compare tape gradients of a scalar function with central finite differences.

    Args:
        f: Called with the checked tensors as positional arguments, returns a scalar Tensor
        at: One tensor, a sequence of tensors or a name -> tensor mapping (e.g. named parameters)
        eps: Finite-difference step; 1e-5 for f64 and 1e-3 for f32 when omitted
        tol: Pass threshold on the relative error ||a - n|| / (||a|| + ||n||)

    Returns:
        GradcheckReport: Per-tensor and maximal relative errors
    """
    named = _named(at)
    tensors = list(named.values())
    if not tensors:
        raise UsageError("gradcheck needs at least one input")
    default_eps, default_tol = DEFAULTS.get(tensors[0].dtype, DEFAULTS[np.dtype(np.float32)])
    eps = default_eps if eps is None else eps
    tol = default_tol if tol is None else tol
    if eps <= 0:
        raise UsageError("gradcheck needs eps > 0", detail=str(eps))

    saved = [(t.requires_grad, t.grad) for t in tensors]
    for t in tensors:
        t.requires_grad = True
        t.grad = np.zeros_like(t.data)
    try:
        loss = _scalar(f, tensors)
        if loss.requires_grad:
            loss.backward()
        analytic = [t.grad.astype(np.float64) for t in tensors]

        numeric = []
        with no_grad():
            for t in tensors:
                flat = t.data.reshape(-1)
                est = np.zeros(flat.size, dtype=np.float64)
                for i in range(flat.size):
                    original = flat[i]
                    flat[i] = original + eps
                    t.bump_version()
                    plus = _scalar(f, tensors).item()
                    flat[i] = original - eps
                    t.bump_version()
                    minus = _scalar(f, tensors).item()
                    flat[i] = original
                    t.bump_version()
                    est[i] = (plus - minus) / (2.0 * eps)
                numeric.append(est.reshape(t.shape))
    finally:
        for t, (requires_grad, grad) in zip(tensors, saved):
            t.requires_grad = requires_grad
            t.grad = grad

    entries = []
    for (name, t), a, n in zip(named.items(), analytic, numeric):
        diff = np.linalg.norm(a - n)
        rel = diff / max(np.linalg.norm(a) + np.linalg.norm(n), TINY)
        entries.append(GradcheckEntry(name=name, numel=t.size, rel_err=float(rel),
                                      abs_err=float(np.max(np.abs(a - n))) if t.size else 0.0))
    max_rel = max(e.rel_err for e in entries)
    max_abs = max(e.abs_err for e in entries)
    report = GradcheckReport(eps=eps, tol=tol, max_rel_err=max_rel, max_abs_err=max_abs,
                             passed=max_rel <= tol, entries=entries)
    logger.debug(f"gradcheck over {len(entries)} tensors: max rel err {max_rel:.3e}")
    return report
