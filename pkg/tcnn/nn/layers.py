# tcnn/nn/layers.py
"""
Standard layers of the convolutional backbone.
"""
from typing import Optional

import numpy as np

from tcnn.core.exceptions import ConfigError, DimensionError
from tcnn.nn.module import Module, Parameter
from tcnn.tensor import functional as F
from tcnn.tensor.tensor import Tensor, get_default_dtype


class Conv2d(Module):
    """
    k x k convolution with explicit zero padding.

    Attributes:
        weight (Parameter): C_out x C_in x k x k filter bank
        bias (Optional[Parameter]): C_out
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, stride: int = 1,
                 padding: int = 0, bias: bool = False, rng: Optional[np.random.Generator] = None,
                 dtype=None):
        super().__init__()
        if min(in_channels, out_channels, kernel_size, stride) < 1 or padding < 0:
            raise ConfigError("Invalid convolution geometry",
                              detail=f"{in_channels}->{out_channels} k={kernel_size} s={stride} p={padding}")
        dtype = dtype or get_default_dtype()
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * kernel_size * kernel_size
        # He initialization for ReLU networks
        w = rng.standard_normal((out_channels, in_channels, kernel_size, kernel_size)) * np.sqrt(2.0 / fan_in)
        self.weight = Parameter(w, dtype=dtype)
        self.bias = Parameter(np.zeros(out_channels), dtype=dtype) if bias else None
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return conv_forward(self, x)

    def extra_repr(self) -> str:
        return (f"{self.in_channels}, {self.out_channels}, k={self.kernel_size}, "
                f"stride={self.stride}, padding={self.padding}")


def conv_forward(layer: Conv2d, x: Tensor) -> Tensor:
    """conv2d(pad(x), filter, stride, 0) plus the per-channel bias."""
    if x.ndim != 4 or x.shape[1] != layer.in_channels:
        raise DimensionError("Convolution input channels do not match",
                             detail=f"input {x.shape}, layer expects {layer.in_channels} channels")
    out = F.conv2d(x.pad2d(layer.padding), layer.weight, stride=layer.stride, padding=0)
    if layer.bias is not None:
        out = out + layer.bias.reshape(1, -1, 1, 1)
    return out


class BatchNorm2d(Module):
    """Per-channel batch normalization with running statistics for eval mode."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=None):
        super().__init__()
        dtype = dtype or get_default_dtype()
        self.weight = Parameter(np.ones(channels), dtype=dtype)
        self.bias = Parameter(np.zeros(channels), dtype=dtype)
        self.register_buffer("running_mean", Tensor(np.zeros(channels), dtype=dtype))
        self.register_buffer("running_var", Tensor(np.ones(channels), dtype=dtype))
        self.channels = channels
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return batchnorm_forward(self, x, self.training)

    def extra_repr(self) -> str:
        return str(self.channels)


def batchnorm_forward(bn: BatchNorm2d, x: Tensor, training: bool) -> Tensor:
    """
    Normalize by batch statistics (training, running stats updated) or by running statistics (eval),
    then apply the affine map.
    """
    if x.ndim != 4 or x.shape[1] != bn.channels:
        raise DimensionError("BatchNorm channel mismatch", detail=f"input {x.shape}, layer {bn.channels}")
    if not training:
        return F.batch_norm_eval(x, bn.weight, bn.bias, bn.running_mean.data, bn.running_var.data, bn.eps)
    mean = x.data.mean(axis=(0, 2, 3))
    var = x.data.var(axis=(0, 2, 3))
    n = x.size // x.shape[1]
    unbiased = var * n / max(n - 1, 1)
    bn.running_mean.assign((1.0 - bn.momentum) * bn.running_mean.data + bn.momentum * mean)
    bn.running_var.assign((1.0 - bn.momentum) * bn.running_var.data + bn.momentum * unbiased)
    return F.batch_norm(x, bn.weight, bn.bias, mean, var, bn.eps)


class ReLU(Module):
    def forward(self, x: Tensor) -> Tensor:
        return F.relu(x)


class Pad2d(Module):
    """Zero padding of `pad` pixels per side."""

    def __init__(self, pad: int):
        super().__init__()
        self.pad = pad

    def forward(self, x: Tensor) -> Tensor:
        return x.pad2d(self.pad)

    def extra_repr(self) -> str:
        return str(self.pad)


class Crop2d(Module):
    """Inverse of Pad2d: keeps the central region."""

    def __init__(self, crop: int):
        super().__init__()
        self.crop = crop

    def forward(self, x: Tensor) -> Tensor:
        return F.crop2d(x, self.crop)

    def extra_repr(self) -> str:
        return str(self.crop)


class AvgPool2d(Module):
    def __init__(self, window: int, stride: int, ceil_mode: bool = False):
        super().__init__()
        self.window = window
        self.stride = stride
        self.ceil_mode = ceil_mode

    def forward(self, x: Tensor) -> Tensor:
        if self.window == 1 and self.stride == 1:
            return x
        return F.avg_pool2d(x, self.window, self.stride, self.ceil_mode)

    def extra_repr(self) -> str:
        return f"window={self.window}, stride={self.stride}, ceil_mode={self.ceil_mode}"


class GlobalAvgPool(Module):
    """B x C x H x W -> B x C."""
    def forward(self, x: Tensor) -> Tensor:
        return x.mean(axis=(2, 3))


class Linear(Module):
    """x W + b with W of shape in_features x out_features."""

    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 rng: Optional[np.random.Generator] = None, dtype=None):
        super().__init__()
        dtype = dtype or get_default_dtype()
        rng = rng or np.random.default_rng(0)
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Parameter(rng.uniform(-bound, bound, (in_features, out_features)), dtype=dtype)
        self.bias = Parameter(np.zeros(out_features), dtype=dtype) if bias else None
        self.in_features = in_features
        self.out_features = out_features

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise DimensionError("Linear input width mismatch",
                                 detail=f"input {x.shape}, layer expects {self.in_features}")
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out

    def extra_repr(self) -> str:
        return f"{self.in_features}, {self.out_features}"


class StochasticDepth(Module):
    """
    Randomly drops a residual branch per sample during training.

    Attributes:
        rate (float): Drop probability d_r in [0, 1)
        rng (np.random.Generator): Source of the drop decisions
    """

    def __init__(self, rate: float = 0.0, rng: Optional[np.random.Generator] = None):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigError("Stochastic depth rate must lie in [0, 1)", detail=str(rate))
        self.rate = rate
        self.rng = rng or np.random.default_rng(0)

    def forward(self, branch: Tensor) -> Tensor:
        return stochastic_depth_apply(self, branch, self.rng)

    def extra_repr(self) -> str:
        return f"rate={self.rate}"


def stochastic_depth_apply(sd: StochasticDepth, branch: Tensor, rng: np.random.Generator) -> Tensor:
    return F.stochastic_depth(branch, sd.rate, sd.training, rng)
