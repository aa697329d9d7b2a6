"""
Transformed CNN toolkit

This package turns trained convolutional layers into functionally equivalent
gated positional self-attention (GPSA) layers and trains the resulting hybrids.
It ships its own small reverse-mode autodiff engine on top of numpy, a mini-ResNet
builder, the conv->GPSA surgery, a training harness and a command-line surface.
"""
__version__ = "0.1.0"
