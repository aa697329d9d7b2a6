# tcnn/train/optim.py
"""
SGD with momentum and AdamW over named parameters.

State is keyed by dotted parameter name, so it survives a model clone or a
surgery that keeps the name of a parameter.
"""
from typing import Dict, Iterable, List, Optional, Set, Tuple

import numpy as np

from tcnn.core.exceptions import ConfigError
from tcnn.nn.module import Module, Parameter
from tcnn.schemas.plan import TrainPlan
from tcnn.train.groups import no_decay_names, param_groups
from tcnn.utils.logging import logger


def sgd_step(param: np.ndarray, grad: np.ndarray, state: dict, lr: float, momentum: float = 0.9,
             weight_decay: float = 0.0) -> np.ndarray:
    """v <- momentum * v + g + wd * theta; theta <- theta - lr * v (in place)."""
    g = grad + weight_decay * param if weight_decay else grad
    buf = state.get("momentum_buffer")
    if buf is None:
        buf = np.zeros_like(param)
        state["momentum_buffer"] = buf
    buf *= momentum
    buf += g
    param -= lr * buf
    return param


def adamw_step(param: np.ndarray, grad: np.ndarray, state: dict, lr: float,
               betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
               weight_decay: float = 0.0) -> np.ndarray:
    """Decoupled decay theta <- theta * (1 - lr * wd), then the bias-corrected Adam update (in place)."""
    beta1, beta2 = betas
    if "exp_avg" not in state:
        state["exp_avg"] = np.zeros_like(param)
        state["exp_avg_sq"] = np.zeros_like(param)
        state["step"] = 0
    state["step"] += 1
    t = state["step"]
    if weight_decay:
        param *= 1.0 - lr * weight_decay
    m, v = state["exp_avg"], state["exp_avg_sq"]
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return param


class Optimizer:
    """
    Applies one optimizer kind to every parameter of a model.

    Gate parameters use the constant `gating_lr` when the plan sets one; GPSA
    scalars, biases and normalization parameters are excluded from weight decay.
    """

    def __init__(self, model: Module, plan: TrainPlan):
        self.kind = plan.optimizer
        self.plan = plan
        self.state: Dict[str, dict] = {}
        self.bind(model)

    def bind(self, model: Module) -> None:
        """Attach to `model`, keeping state for every parameter whose name and shape survive."""
        self.params: List[Tuple[str, Parameter]] = list(model.named_parameters())
        groups = param_groups(model)
        self.gates: Set[str] = {name for name, _ in groups["gates"]}
        self.no_decay: Set[str] = no_decay_names(model)
        shapes = {name: p.shape for name, p in self.params}
        stale = [name for name, s in self.state.items()
                 if name not in shapes or any(np.shape(v) not in ((), shapes[name]) for v in s.values())]
        for name in stale:
            del self.state[name]
        if stale:
            logger.info(f"Dropped optimizer state of {len(stale)} replaced parameters")

    def lr_for(self, name: str, lr: float) -> float:
        if name in self.gates and self.plan.gating_lr is not None:
            return self.plan.gating_lr
        return lr

    def step(self, lr: float) -> None:
        for name, p in self.params:
            if p.grad is None:
                continue
            state = self.state.setdefault(name, {})
            wd = 0.0 if name in self.no_decay else self.plan.weight_decay
            step_lr = self.lr_for(name, lr)
            if self.kind == "sgd_momentum":
                sgd_step(p.data, p.grad, state, step_lr, self.plan.momentum, wd)
            elif self.kind == "adamw":
                adamw_step(p.data, p.grad, state, step_lr, tuple(self.plan.betas), self.plan.eps, wd)
            else:
                raise ConfigError("Unknown optimizer", detail=self.kind)
            p.bump_version()

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()

    # ------ serialization ------
    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Flat `slot/param-name` -> array view of the state (scalars as 0-d arrays)."""
        flat = {}
        for name, _ in self.params:
            for slot, value in sorted(self.state.get(name, {}).items()):
                flat[f"{slot}/{name}"] = np.asarray(value)
        return flat

    def load_state_arrays(self, flat: Dict[str, np.ndarray]) -> None:
        self.state = {}
        for key, value in flat.items():
            slot, name = key.split("/", 1)
            entry = self.state.setdefault(name, {})
            entry[slot] = int(value) if slot == "step" else np.array(value)
