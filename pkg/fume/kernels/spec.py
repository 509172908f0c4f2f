"""fume/kernels/spec.py

Data-free description of a kernel: maps input shapes to the output shape
and to a multiply-accumulate count. Efficiency accounting for whole
networks is built from these rules alone.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

from fume.errors import ShapeError

Shape = Tuple[int, ...]


class KernelKind(str, Enum):
    """Kinds of kernel the network is assembled from."""
    CONV = "conv"
    DSCONV = "depthwise-separable-conv"
    INVERTED_RESIDUAL = "inverted-residual"
    BATCH_NORM = "batch-norm"
    RELU = "relu"
    SIGMOID = "sigmoid"
    SOFTMAX = "softmax"
    BILINEAR_RESIZE = "bilinear-resize"
    ADAPTIVE_AVG_POOL = "adaptive-avg-pool"
    GLOBAL_AVG_POOL = "global-avg-pool"
    LINEAR = "linear"
    DROPOUT = "dropout"
    ADD = "add"
    CONCAT = "concat"
    HADAMARD = "hadamard"
    PYRAMID_POOLING = "pyramid-pooling"
    ATTENTION = "attention"


_ELEMENTWISE = {
    KernelKind.BATCH_NORM,
    KernelKind.RELU,
    KernelKind.SIGMOID,
    KernelKind.SOFTMAX,
    KernelKind.DROPOUT,
}


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class KernelSpec:
    """
    Hyperparameters of one kernel.

    ``size`` is a fixed target extent (resize, adaptive pooling); ``scale``
    is an integer resize factor used when the target follows the input.
    ``inner_channels`` is the attention key width. ``scales`` lists the
    pyramid pooling bins.
    """
    kind: KernelKind
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 1
    stride: int = 1
    padding: int = 0
    groups: int = 1
    dilation: int = 1
    expansion: int = 1
    size: Tuple[int, int] = (0, 0)
    scale: int = 0
    keep_prob: float = 1.0
    bias: bool = False
    inner_channels: int = 0
    scales: Tuple[int, ...] = ()

    def _spatial(self, h: int, w: int) -> Tuple[int, int]:
        k, s, p, d = self.kernel_size, self.stride, self.padding, self.dilation
        ho = (h + 2 * p - d * (k - 1) - 1) // s + 1
        wo = (w + 2 * p - d * (k - 1) - 1) // s + 1
        if ho <= 0 or wo <= 0:
            raise ShapeError(f"{self.kind.value}: input {h}x{w} too small for kernel {k}")
        return ho, wo

    def _require_channels(self, shape: Shape) -> None:
        if len(shape) != 4 or shape[1] != self.in_channels:
            raise ShapeError(f"{self.kind.value} expects (N, {self.in_channels}, H, W), got {shape}")

    def infer_shape(self, *shapes: Shape) -> Shape:
        """Output shape for the given input shape(s)."""
        kind = self.kind
        shape = tuple(shapes[0])
        if kind in _ELEMENTWISE or kind is KernelKind.HADAMARD:
            return shape
        if kind is KernelKind.CONV:
            self._require_channels(shape)
            return (shape[0], self.out_channels) + self._spatial(shape[2], shape[3])
        if kind in (KernelKind.DSCONV, KernelKind.INVERTED_RESIDUAL):
            self._require_channels(shape)
            return (shape[0], self.out_channels, _ceil_div(shape[2], self.stride), _ceil_div(shape[3], self.stride))
        if kind is KernelKind.BILINEAR_RESIZE:
            size = self.size if self.scale == 0 else (shape[-2] * self.scale, shape[-1] * self.scale)
            if size[0] <= 0 or size[1] <= 0:
                raise ShapeError(f"cannot resize to non-positive size {size}")
            return shape[:-2] + tuple(size)
        if kind is KernelKind.ADAPTIVE_AVG_POOL:
            return shape[:-2] + tuple(self.size)
        if kind is KernelKind.GLOBAL_AVG_POOL:
            return shape[:2]
        if kind is KernelKind.LINEAR:
            if shape[-1] != self.in_channels:
                raise ShapeError(f"linear expects {self.in_channels} features, got {shape}")
            return shape[:-1] + (self.out_channels,)
        if kind is KernelKind.ADD:
            if any(tuple(s) != shape for s in shapes):
                raise ShapeError(f"add operands differ: {shapes}")
            return shape
        if kind is KernelKind.CONCAT:
            if any(tuple(s[:1]) + tuple(s[2:]) != shape[:1] + shape[2:] for s in shapes):
                raise ShapeError(f"concat operands differ outside channels: {shapes}")
            return (shape[0], sum(s[1] for s in shapes)) + shape[2:]
        if kind is KernelKind.PYRAMID_POOLING:
            self._require_channels(shape)
            return shape
        if kind is KernelKind.ATTENTION:
            self._require_channels(shape)
            return shape
        raise ShapeError(f"no shape rule for {kind}")

    def macs(self, *shapes: Shape) -> int:
        """Multiply-accumulate count; pooling, resizing and elementwise ops are free."""
        kind = self.kind
        shape = tuple(shapes[0])
        n = shape[0]
        if kind is KernelKind.CONV:
            _, _, ho, wo = self.infer_shape(shape)
            per_position = self.kernel_size ** 2 * self.in_channels // self.groups
            return n * per_position * self.out_channels * ho * wo
        if kind is KernelKind.DSCONV:
            _, _, ho, wo = self.infer_shape(shape)
            return n * ho * wo * (self.kernel_size ** 2 * self.in_channels + self.in_channels * self.out_channels)
        if kind is KernelKind.INVERTED_RESIDUAL:
            hidden = self.in_channels * self.expansion
            _, _, ho, wo = self.infer_shape(shape)
            expand = self.in_channels * hidden * shape[2] * shape[3]
            return n * (expand + (9 * hidden + hidden * self.out_channels) * ho * wo)
        if kind is KernelKind.LINEAR:
            return int(math.prod(shape[:-1])) * self.in_channels * self.out_channels
        if kind is KernelKind.PYRAMID_POOLING:
            c, h, w = shape[1:]
            branch = self.in_channels // 4
            pooled = sum(s * s for s in self.scales)
            return n * (c * branch * pooled + 2 * c * c * h * w)
        if kind is KernelKind.ATTENTION:
            # query/key/value projections, then scores and weighted values
            query = shape
            context = tuple(shapes[1]) if len(shapes) > 1 else shape
            nq = query[2] * query[3]
            nk = context[2] * context[3]
            c, dk = self.in_channels, self.inner_channels
            projections = c * dk * nq + (c * dk + c * c) * nk
            return n * (projections + nq * nk * dk + nq * nk * c)
        self.infer_shape(*shapes)
        return 0
