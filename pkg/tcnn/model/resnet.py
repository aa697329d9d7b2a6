# tcnn/model/resnet.py
"""
Mini-ResNet backbone: stem, stages of residual blocks, global pooling, linear classifier.
"""
from typing import List, Optional, Tuple

import numpy as np

from tcnn.core.exceptions import ConfigError, DimensionError
from tcnn.nn.gpsa import GpsaLayer
from tcnn.nn.layers import BatchNorm2d, Conv2d, GlobalAvgPool, Linear, ReLU, StochasticDepth
from tcnn.nn.module import Module, ModuleList, Sequential
from tcnn.schemas.model import ModelConfig
from tcnn.tensor import functional as F
from tcnn.tensor.tensor import DTYPES, Tensor
from tcnn.utils.logging import logger
from tcnn.utils.rng import stream


class BasicBlock(Module):
    """3x3 conv - BN - ReLU - 3x3 conv - BN, plus shortcut, then ReLU."""

    def __init__(self, in_channels: int, channels: int, stride: int, drop: StochasticDepth,
                 rng: np.random.Generator, dtype):
        super().__init__()
        self.conv1 = Conv2d(in_channels, channels, 3, stride=stride, padding=1, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(channels, dtype=dtype)
        self.relu = ReLU()
        self.conv2 = Conv2d(channels, channels, 3, padding=1, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(channels, dtype=dtype)
        self.shortcut = _shortcut(in_channels, channels, stride, rng, dtype)
        self.drop_path = drop

    def forward(self, x: Tensor) -> Tensor:
        branch = self.bn2(self.conv2(self.relu(self.bn1(self.conv1(x)))))
        identity = x if self.shortcut is None else self.shortcut(x)
        return F.relu(identity + self.drop_path(branch))


class Bottleneck(Module):
    """1x1 reduce - 3x3 (strided) - 1x1 expand, with BN/ReLU after each conv."""

    def __init__(self, in_channels: int, channels: int, stride: int, drop: StochasticDepth,
                 rng: np.random.Generator, dtype):
        super().__init__()
        width = max(1, channels // 4)
        self.conv1 = Conv2d(in_channels, width, 1, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(width, dtype=dtype)
        self.conv2 = Conv2d(width, width, 3, stride=stride, padding=1, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(width, dtype=dtype)
        self.conv3 = Conv2d(width, channels, 1, rng=rng, dtype=dtype)
        self.bn3 = BatchNorm2d(channels, dtype=dtype)
        self.relu = ReLU()
        self.shortcut = _shortcut(in_channels, channels, stride, rng, dtype)
        self.drop_path = drop

    def forward(self, x: Tensor) -> Tensor:
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.relu(self.bn2(self.conv2(out)))
        branch = self.bn3(self.conv3(out))
        identity = x if self.shortcut is None else self.shortcut(x)
        return F.relu(identity + self.drop_path(branch))


def _shortcut(in_channels: int, channels: int, stride: int, rng, dtype) -> Optional[Sequential]:
    if stride == 1 and in_channels == channels:
        return None
    return Sequential(Conv2d(in_channels, channels, 1, stride=stride, rng=rng, dtype=dtype),
                      BatchNorm2d(channels, dtype=dtype))


BLOCKS = {"basic": BasicBlock, "bottleneck": Bottleneck}


class ResNet(Module):
    """
    CNN built from a ModelConfig; after surgery the last stage hosts GPSA layers.

    Attributes:
        config (ModelConfig): Architecture the model was built from
        transform (Optional[dict]): Surgery settings once the last stage is transformed
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        dtype = DTYPES[config.dtype]
        rng = stream(config.seed, "init")
        self.config = config
        self.transform = None
        self.drop_rng = stream(config.seed, "drop_path")
        self.stem = Sequential(Conv2d(config.input_channels, config.stem_channels, 3, padding=1, rng=rng, dtype=dtype),
                               BatchNorm2d(config.stem_channels, dtype=dtype), ReLU())
        self.stages = ModuleList()
        in_channels = config.stem_channels
        for spec in config.stages:
            stage = ModuleList()
            for i in range(spec.blocks):
                drop = StochasticDepth(config.drop_rate, self.drop_rng)
                stride = spec.stride if i == 0 else 1
                stage.append(BLOCKS[spec.kind](in_channels, spec.channels, stride, drop, rng, dtype))
                in_channels = spec.channels
            self.stages.append(stage)
        self.pool = GlobalAvgPool()
        self.fc = Linear(in_channels, config.n_classes, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return forward_classify(self, x)

    def set_drop_rate(self, rate: float) -> None:
        """Use a new stochastic depth rate d_r in every block."""
        if not 0.0 <= rate < 1.0:
            raise ConfigError("Stochastic depth rate must lie in [0, 1)", detail=str(rate))
        for m in self.modules():
            if isinstance(m, StochasticDepth):
                m.rate = rate


def build_cnn(config: ModelConfig) -> ResNet:
    """Instantiate a seeded CNN; identical configs give bit-identical parameters."""
    model = ResNet(config)
    logger.info(f"Built CNN with {len(config.stages)} stages, {model.num_parameters()} parameters")
    return model


def forward_classify(model: ResNet, x: Tensor) -> Tensor:
    """B x C x H x W images -> B x n_classes logits."""
    if x.ndim != 4 or x.shape[1] != model.config.input_channels:
        raise DimensionError("Input does not match the stem",
                             detail=f"input {x.shape}, stem expects {model.config.input_channels} channels")
    out = model.stem(x)
    for stage in model.stages:
        for block in stage:
            out = block(out)
    return model.fc(model.pool(out))


def gpsa_layers(model: Module) -> List[Tuple[str, GpsaLayer]]:
    """GPSA layers in forward order with their dotted names."""
    return [(name, m) for name, m in model.named_modules() if isinstance(m, GpsaLayer)]
