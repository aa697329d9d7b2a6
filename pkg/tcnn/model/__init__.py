# tcnn/model/__init__.py
"""Mini-ResNet builder and classification loss."""
from tcnn.model.loss import accuracy, cross_entropy
from tcnn.model.resnet import ResNet, build_cnn, forward_classify, gpsa_layers
