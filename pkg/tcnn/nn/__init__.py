# tcnn/nn/__init__.py
"""Module system, backbone layers and the GPSA layer."""
from tcnn.nn.gpsa import GpsaLayer, PositionalLogits
from tcnn.nn.layers import (
    AvgPool2d,
    BatchNorm2d,
    Conv2d,
    Crop2d,
    GlobalAvgPool,
    Linear,
    Pad2d,
    ReLU,
    StochasticDepth,
)
from tcnn.nn.module import Module, ModuleList, Parameter, Sequential
