# tcnn/tensor/tensor.py
"""
Dense tensor with reverse-mode automatic differentiation.

A Tensor wraps a row-major numpy array. Operations on tensors that require
gradients record their inputs and a backward closure; `backward()` orders the
recorded graph topologically into a GradTape and replays it in reverse, visiting
every node exactly once. Gradients accumulate only on leaves (parameters and
user-created tensors with requires_grad=True).
"""
import contextlib
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from tcnn.core.exceptions import DimensionError, UsageError

DTYPES = {"f32": np.float32, "f64": np.float64}

_state = {"dtype": np.float32, "grad_enabled": True}

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def set_default_dtype(name: str) -> None:
    """Select the dtype ("f32" or "f64") used for tensors created without one."""
    if name not in DTYPES:
        raise UsageError("Unknown dtype", detail=name)
    _state["dtype"] = DTYPES[name]


def get_default_dtype() -> type:
    return _state["dtype"]


def dtype_name(dtype) -> str:
    return "f64" if np.dtype(dtype) == np.float64 else "f32"


def is_grad_enabled() -> bool:
    return _state["grad_enabled"]


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block."""
    previous = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = previous


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _normalize_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    axes = []
    for a in axis:
        if not -ndim <= a < ndim:
            raise DimensionError("Axis out of range", detail=f"axis {a} for rank {ndim}")
        axes.append(a % ndim)
    return tuple(sorted(axes))


class Tensor:
    """
    Dense n-dimensional array participating in a reverse-mode differentiation graph.

    Attributes:
        data (np.ndarray): Row-major values, float32 or float64
        requires_grad (bool): Whether gradients flow to (or through) this tensor
        grad (Optional[np.ndarray]): Accumulator with the shape of data, leaves only
    """

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = _state["dtype"]
        elif isinstance(dtype, str):
            dtype = DTYPES.get(dtype) or np.dtype(dtype)
        self.data = np.ascontiguousarray(np.asarray(data, dtype=dtype))
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op = "leaf"
        self._version = 0

    # ------ properties ------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    @property
    def version(self) -> int:
        return self._version

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={dtype_name(self.dtype)}, op={self._op})"

    def __len__(self) -> int:
        return self.shape[0]

    # ------ value access ------
    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.dtype)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0)

    def assign(self, values: np.ndarray) -> None:
        """Overwrite the values in place (shape preserved) and bump the version counter."""
        values = np.asarray(values)
        if values.shape != self.shape:
            raise DimensionError("Cannot assign values of a different shape",
                                 detail=f"{values.shape} into {self.shape}")
        np.copyto(self.data, values, casting="unsafe")
        self._version += 1

    def bump_version(self) -> None:
        self._version += 1

    def astype(self, dtype) -> "Tensor":
        """Return a leaf copy in another dtype, keeping requires_grad."""
        return Tensor(self.data, requires_grad=self.requires_grad, dtype=dtype)

    # ------ autodiff ------
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """
        Back-propagate from this tensor.

        Args:
            grad (Optional[np.ndarray]): Seed gradient; defaults to 1 for scalar losses

        Raises:
            UsageError: If the tensor is not scalar and no seed is given, or is not on a tape
        """
        if grad is None:
            if self.size != 1:
                raise UsageError("backward() needs a scalar loss", detail=f"got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            raise UsageError("Loss is not on a tape", detail="no input requires grad")
        tape = GradTape.record(self)
        tape.replay(self, np.asarray(grad, dtype=self.dtype))

    # ------ arithmetic ------
    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other):
        a, b = self, self._lift(other)

        def backward(g):
            return unbroadcast(g, a.shape), unbroadcast(g, b.shape)
        return make_result(a.data + b.data, (a, b), backward, "add")

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self, self._lift(other)

        def backward(g):
            return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)
        return make_result(a.data - b.data, (a, b), backward, "sub")

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        a, b = self, self._lift(other)

        def backward(g):
            return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)
        return make_result(a.data * b.data, (a, b), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, self._lift(other)

        def backward(g):
            return (unbroadcast(g / b.data, a.shape),
                    unbroadcast(-g * a.data / (b.data * b.data), b.shape))
        return make_result(a.data / b.data, (a, b), backward, "div")

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __neg__(self):
        a = self

        def backward(g):
            return (-g,)
        return make_result(-a.data, (a,), backward, "neg")

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise UsageError("Only constant exponents are supported")
        a, p = self, float(exponent)

        def backward(g):
            return (g * p * a.data ** (p - 1.0),)
        return make_result(a.data ** p, (a,), backward, "pow")

    def __matmul__(self, other):
        a, b = self, self._lift(other)
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise DimensionError("matmul shape mismatch", detail=f"{a.shape} x {b.shape}")
        try:
            out = np.matmul(a.data, b.data)
        except ValueError:
            raise DimensionError("matmul batch shapes do not broadcast", detail=f"{a.shape} x {b.shape}")

        def backward(g):
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)
        return make_result(out, (a, b), backward, "matmul")

    # ------ elementwise maps ------
    def exp(self):
        a = self
        out = np.exp(a.data)

        def backward(g):
            return (g * out,)
        return make_result(out, (a,), backward, "exp")

    def log(self):
        a = self

        def backward(g):
            return (g / a.data,)
        return make_result(np.log(a.data), (a,), backward, "log")

    # ------ shape manipulation ------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        try:
            out = a.data.reshape(shape)
        except ValueError:
            raise DimensionError("Cannot reshape", detail=f"{a.shape} -> {shape}")

        def backward(g):
            return (g.reshape(a.shape),)
        return make_result(out, (a,), backward, "reshape")

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        a = self
        inverse = tuple(np.argsort(axes))

        def backward(g):
            return (np.transpose(g, inverse),)
        return make_result(np.ascontiguousarray(np.transpose(a.data, axes)), (a,), backward, "transpose")

    def __getitem__(self, index):
        a = self
        out = np.array(a.data[index], copy=True)

        def backward(g):
            full = np.zeros_like(a.data)
            np.add.at(full, index, g)
            return (full,)
        return make_result(out, (a,), backward, "index")

    def pad2d(self, pad: int, value: float = 0.0):
        """Pad the last two axes by `pad` on each side with a constant."""
        if pad < 0:
            raise UsageError("Padding must be non-negative", detail=str(pad))
        if pad == 0:
            return self
        a = self
        widths = [(0, 0)] * (a.ndim - 2) + [(pad, pad), (pad, pad)]
        out = np.pad(a.data, widths, mode="constant", constant_values=value)

        def backward(g):
            return (np.ascontiguousarray(g[..., pad:-pad, pad:-pad]),)
        return make_result(out, (a,), backward, "pad2d")

    # ------ reductions ------
    def sum(self, axis=None, keepdims: bool = False):
        a = self
        axes = _normalize_axes(axis, a.ndim)

        def backward(g):
            if not keepdims:
                g = np.expand_dims(g, axes)
            return (np.broadcast_to(g, a.shape),)
        return make_result(np.asarray(a.data.sum(axis=axes, keepdims=keepdims)), (a,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        axes = _normalize_axes(axis, self.ndim)
        count = int(np.prod([self.shape[i] for i in axes])) if axes else 1
        return self.sum(axis=axes, keepdims=keepdims) / float(count)

    def max(self, axis=None, keepdims: bool = False):
        a = self
        axes = _normalize_axes(axis, a.ndim)
        peak = a.data.max(axis=axes, keepdims=True)
        mask = (a.data == peak).astype(a.dtype)
        mask /= mask.sum(axis=axes, keepdims=True)
        out = peak if keepdims else np.squeeze(peak, axis=axes)

        def backward(g):
            if not keepdims:
                g = np.expand_dims(g, axes)
            return (mask * g,)
        return make_result(np.asarray(out), (a,), backward, "max")


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn, op: str) -> Tensor:
    """
    Wrap the output of a primitive, recording it on the tape when needed.

    The node keeps references to its parents and the backward closure only if
    grad mode is on and at least one parent requires gradients.
    """
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data)
    out.grad = None
    out._version = 0
    out._op = op
    needs_grad = _state["grad_enabled"] and any(p.requires_grad for p in parents)
    out.requires_grad = needs_grad
    out._parents = tuple(parents) if needs_grad else ()
    out._backward = backward if needs_grad else None
    return out


class GradTape:
    """
    Ordered list of recorded operations reachable from a root.

    Every node appears after all producers of its inputs, so replaying in
    reverse visits each node once with its complete upstream gradient.
    """

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def record(cls, root: Tensor) -> "GradTape":
        order: List[Tensor] = []
        visited = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def replay(self, root: Tensor, seed: np.ndarray) -> None:
        grads: Dict[int, np.ndarray] = {id(root): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is not None:
                    np.add(node.grad, g, out=node.grad, casting="unsafe")
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or _state["dtype"]), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype or _state["dtype"]), requires_grad=requires_grad)


ArrayLike = Union[Tensor, np.ndarray, float, int, list]
