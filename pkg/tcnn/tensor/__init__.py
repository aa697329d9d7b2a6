# tcnn/tensor/__init__.py
"""Dense tensors, the gradient tape and differentiable primitives."""
from tcnn.tensor.tensor import (
    DTYPES,
    GradTape,
    Tensor,
    dtype_name,
    get_default_dtype,
    is_grad_enabled,
    no_grad,
    ones,
    set_default_dtype,
    tensor,
    zeros,
)
