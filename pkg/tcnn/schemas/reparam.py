# tcnn/schemas/reparam.py
"""
Schemas for the conv -> GPSA surgery: initialization mode and surgery report.
"""
import math
from typing import List, Optional

from pydantic import BaseModel, root_validator, validator

# strict mode must make off-center softmax mass and content leakage negligible
STRICT_MAX_LEAK = 1e-6
STRICT_MAX_OFF_CENTER = 1e-8

MODE_DEFAULTS = {
    # kind: (alpha_init, lambda_init, pool_window)
    "paper": (1.0, 1.0, 2),
    "strict": (20.0, 20.0, 1),
}


class InitMode(BaseModel):
    """
    How convolutional the GPSA initialization is.

    Attributes:
        kind (str): "paper" (alpha = 1, lambda = 1) or "strict" (saturated, exact equivalence)
        alpha_init (float): Initial locality strength alpha for every head
        lambda_init (float): Initial gating parameter lambda for every head
        pool_window (int): Average-pooling window used after a stride-2 replacement

    Paper mode follows a replaced stride-2 convolution with 2 x 2 average
    pooling, which changes the function of the strided block. Strict mode
    departs from that and defaults to pool_window = 1: plain subsampling of
    the stride-1 GPSA output, which is exactly what the stride-2 convolution
    computes, so equivalence also holds in strided blocks.
    """
    kind: str = "paper"
    alpha_init: Optional[float] = None
    lambda_init: Optional[float] = None
    pool_window: Optional[int] = None

    @validator("kind")
    def kind_known(cls, v):
        """Validate mode name."""
        if v not in MODE_DEFAULTS:
            raise ValueError("kind must be paper or strict")
        return v

    @root_validator(skip_on_failure=True)
    def fill_defaults(cls, values):
        """Fill per-kind defaults and enforce the strict-mode saturation guarantee."""
        alpha, lam, window = MODE_DEFAULTS[values["kind"]]
        if values.get("alpha_init") is None:
            values["alpha_init"] = alpha
        if values.get("lambda_init") is None:
            values["lambda_init"] = lam
        if values.get("pool_window") is None:
            values["pool_window"] = window
        if values["alpha_init"] <= 0:
            raise ValueError("alpha_init must be positive")
        if values["pool_window"] not in (1, 2):
            raise ValueError("pool_window must be 1 or 2")
        if values["kind"] == "strict":
            gate = 1.0 / (1.0 + math.exp(-values["lambda_init"]))
            if gate < 1.0 - STRICT_MAX_LEAK:
                raise ValueError("strict mode needs sigmoid(lambda_init) >= 1 - 1e-6")
            if math.exp(-values["alpha_init"]) > STRICT_MAX_OFF_CENTER:
                raise ValueError("strict mode needs exp(-alpha_init) <= 1e-8")
        return values

    @classmethod
    def paper(cls) -> "InitMode":
        return cls(kind="paper")

    @classmethod
    def strict(cls, alpha_init: Optional[float] = None, lambda_init: Optional[float] = None) -> "InitMode":
        return cls(kind="strict", alpha_init=alpha_init, lambda_init=lambda_init)


class SurgeryReport(BaseModel):
    """
    Outcome of a surgery or an equivalence check.

    When `params_added_expected` is set, the measured parameter increase must
    match it exactly.
    """
    mode: Optional[str] = None
    layers_replaced: List[str] = []
    params_before: int = 0
    params_after: int = 0
    params_added_expected: Optional[int] = None
    n_probes: int = 0
    resolution: Optional[int] = None
    max_abs_dev: Optional[float] = None
    max_rel_dev: Optional[float] = None
    tol: Optional[float] = None
    passed: Optional[bool] = None

    @root_validator(skip_on_failure=True)
    def parameter_increase_matches(cls, values):
        """Parameter increase equals the added Q/K/V sizes plus 4 scalars per head."""
        expected = values.get("params_added_expected")
        if expected is not None and values["params_after"] - values["params_before"] != expected:
            raise ValueError(
                f"parameter increase {values['params_after'] - values['params_before']} "
                f"differs from expected {expected}")
        return values

    @property
    def params_added(self) -> int:
        return self.params_after - self.params_before

    @property
    def relative_increase(self) -> float:
        return self.params_added / self.params_before if self.params_before else 0.0

    def to_text(self) -> str:
        """Human-readable summary."""
        lines = ["Surgery report", "=============="]
        if self.mode:
            lines.append(f"mode: {self.mode}")
        lines.append(f"layers replaced: {len(self.layers_replaced)}")
        for name in self.layers_replaced:
            lines.append(f"  - {name}")
        lines.append(f"parameters: {self.params_before} -> {self.params_after} "
                     f"(+{self.params_added}, {100.0 * self.relative_increase:.2f}%)")
        if self.max_abs_dev is not None:
            lines.append(f"probes: {self.n_probes} at resolution {self.resolution}")
            lines.append(f"max abs deviation: {self.max_abs_dev:.3e}")
            lines.append(f"max rel deviation: {self.max_rel_dev:.3e}")
        if self.passed is not None:
            lines.append(f"tolerance: {self.tol:.1e} -> {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        """Machine-readable flat key=value form."""
        entries = {
            "mode": self.mode or "",
            "layers_replaced": ",".join(self.layers_replaced),
            "n_layers_replaced": len(self.layers_replaced),
            "params_before": self.params_before,
            "params_after": self.params_after,
            "params_added": self.params_added,
            "relative_increase": repr(self.relative_increase),
            "n_probes": self.n_probes,
            "resolution": "" if self.resolution is None else self.resolution,
            "max_abs_dev": "" if self.max_abs_dev is None else repr(self.max_abs_dev),
            "max_rel_dev": "" if self.max_rel_dev is None else repr(self.max_rel_dev),
            "tol": "" if self.tol is None else repr(self.tol),
            "passed": "" if self.passed is None else str(self.passed).lower(),
        }
        return "".join(f"{key}={value}\n" for key, value in entries.items())
