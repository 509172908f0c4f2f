"""fume/kernels/__init__.py

Differentiable numpy kernels and the layers assembled from them.
"""

from .spec import KernelKind, KernelSpec
from .layers import (
    Attention,
    AdaptiveAvgPool,
    BatchNorm2d,
    BilinearResize,
    Conv2d,
    Dropout,
    DSConv,
    GlobalAvgPool,
    InvertedResidual,
    Layer,
    Linear,
    ParamStore,
    PyramidPooling,
    ReLU,
    Sequential,
    Sigmoid,
    conv_bn,
)
from .gradcheck import GradCheckReport, grad_check, input_grad_check

__all__ = [
    "KernelKind",
    "KernelSpec",
    "Attention",
    "AdaptiveAvgPool",
    "BatchNorm2d",
    "BilinearResize",
    "Conv2d",
    "Dropout",
    "DSConv",
    "GlobalAvgPool",
    "InvertedResidual",
    "Layer",
    "Linear",
    "ParamStore",
    "PyramidPooling",
    "ReLU",
    "Sequential",
    "Sigmoid",
    "conv_bn",
    "GradCheckReport",
    "grad_check",
    "input_grad_check",
]
