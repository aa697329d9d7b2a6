# tcnn/nn/module.py
"""
Module system: parameters, buffers and sub-modules with dotted names.

Attribute assignment registers Parameters and Modules in insertion order, so
`named_parameters()` is deterministic and names such as
`stages.1.0.conv1.gpsa.gate` are stable keys for checkpoints and optimizer state.
"""
import copy
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from tcnn.core.exceptions import DimensionError, FormatError
from tcnn.tensor.tensor import Tensor


class Parameter(Tensor):
    """Trainable leaf tensor."""
    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Base class of every layer and model."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        params = self.__dict__.get("_params")
        if params is None:
            raise AttributeError("Module.__init__() must run before assigning attributes")
        if isinstance(value, Parameter):
            target = self._params
        elif isinstance(value, Module):
            target = self._modules
        elif name in self.__dict__.get("_buffer_names", ()):
            target = self._buffers
        else:
            target = None
        for registry in (self._params, self._buffers, self._modules):
            if registry is not target:
                registry.pop(name, None)
        # re-assigning an existing key keeps its position
        if target is not None:
            target[name] = value
        object.__setattr__(self, name, value)

    def __delattr__(self, name):
        for registry in (self._params, self._buffers, self._modules):
            registry.pop(name, None)
        object.__delattr__(self, name)

    def register_buffer(self, name: str, value: Tensor) -> None:
        """Non-trainable state saved with the model (e.g. running statistics)."""
        names = self.__dict__.setdefault("_buffer_names", set())
        names.add(name)
        setattr(self, name, value)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    # ------ traversal ------
    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._modules.items():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def modules(self) -> Iterator["Module"]:
        for _, m in self.named_modules():
            yield m

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for path, module in self.named_modules(prefix):
            for name, p in module._params.items():
                if p is not None:
                    yield (f"{path}.{name}" if path else name), p

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for path, module in self.named_modules(prefix):
            for name, b in module._buffers.items():
                if b is not None:
                    yield (f"{path}.{name}" if path else name), b

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    # ------ modes ------
    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    # ------ state ------
    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        """Parameters then buffers, each in registration order."""
        state = OrderedDict((name, p.data) for name, p in self.named_parameters())
        state.update((name, b.data) for name, b in self.named_buffers())
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """Copy values into the existing tensors; names and shapes must match exactly."""
        own = self.state_dict()
        missing = [k for k in own if k not in state]
        unexpected = [k for k in state if k not in own]
        if missing or unexpected:
            raise FormatError("State does not match the model",
                              detail=f"missing {missing[:3]}, unexpected {unexpected[:3]}")
        tensors = dict(self.named_parameters())
        tensors.update(self.named_buffers())
        for name, values in state.items():
            if tuple(values.shape) != tensors[name].shape:
                raise DimensionError("State tensor has the wrong shape",
                                     detail=f"{name}: {values.shape} vs {tensors[name].shape}")
            tensors[name].assign(values)

    def clone(self) -> "Module":
        """Independent deep copy (parameters, buffers, random streams)."""
        return copy.deepcopy(self)

    def extra_repr(self) -> str:
        return ""

    def __repr__(self) -> str:
        lines = [f"{type(self).__name__}({self.extra_repr()}"]
        for name, child in self._modules.items():
            body = repr(child).replace("\n", "\n  ")
            lines.append(f"  ({name}): {body}")
        return "\n".join(lines) + ")" if len(lines) > 1 else lines[0] + ")"


class ModuleList(Module):
    """Ordered children named 0, 1, 2, ..."""

    def __init__(self, modules: Optional[List[Module]] = None):
        super().__init__()
        for m in modules or []:
            self.append(m)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._modules)), module)

    def __getitem__(self, index: int) -> Module:
        return list(self._modules.values())[index]

    def __setitem__(self, index: int, module: Module) -> None:
        key = list(self._modules.keys())[index]
        setattr(self, key, module)

    def __len__(self) -> int:
        return len(self._modules)

    def __iter__(self) -> Iterator[Module]:
        return iter(list(self._modules.values()))


class Sequential(ModuleList):
    """Children applied in order."""

    def __init__(self, *modules: Module):
        super().__init__(list(modules))

    def forward(self, x):
        for m in self:
            x = m(x)
        return x
