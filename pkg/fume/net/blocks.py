"""fume/net/blocks.py

Building blocks of the dual-stream network: the shared encoder
(learning-to-downsample + global feature extractor + pyramid pooling),
channel-attention and concat fusion, the feature-fusion decoder and the
classification head.
"""

import logging
from typing import Any, Optional, Sequence, Tuple

import numpy as np

from fume.errors import ShapeError
from fume.kernels import functional as F
from fume.kernels.layers import (
    DSConv,
    Dropout,
    GlobalAvgPool,
    InvertedResidual,
    Layer,
    Linear,
    ParamStore,
    PyramidPooling,
    ReLU,
    Sequential,
    Sigmoid,
    Conv2d,
    conv_bn,
)
from fume.kernels.spec import KernelKind, KernelSpec, Shape

logger = logging.getLogger(__name__)

Tensor = np.ndarray

LOW_CHANNELS = 64
HIGH_CHANNELS = 128
FUSED_CHANNELS = 2 * HIGH_CHANNELS
DECODER_WIDTH = 160
NUM_CLASSES = 3

# (out_channels, repeats, first stride) per bottleneck stage
BOTTLENECK_STAGES = ((64, 3, 2), (96, 3, 2), (128, 3, 1))


class Encoder(Layer):
    """
    Shared encoder returning ``(F_l, F_h)``.

    ``F_l`` is the 64-channel 1/8 map from learning-to-downsample, ``F_h`` the
    128-channel 1/32 map after the bottleneck stages and pyramid pooling.
    """

    def __init__(self, name: str, store: ParamStore, rng: np.random.Generator,
                 stages: Sequence[Tuple[int, int, int]] = BOTTLENECK_STAGES):
        super().__init__(name, store, KernelSpec(KernelKind.CONV, in_channels=1, out_channels=HIGH_CHANNELS))
        self.downsample = Sequential(f"{name}.downsample", store, [
            conv_bn(f"{name}.downsample.conv", store, 1, 32, 3, rng, stride=2),
            DSConv(f"{name}.downsample.ds1", store, 32, 48, rng, stride=2),
            DSConv(f"{name}.downsample.ds2", store, 48, LOW_CHANNELS, rng, stride=2),
        ])
        blocks = []
        in_channels = LOW_CHANNELS
        for stage, (out_channels, repeats, stride) in enumerate(stages, start=1):
            for i in range(repeats):
                blocks.append(InvertedResidual(
                    f"{name}.stage{stage}.block{i}", store, in_channels, out_channels, rng,
                    stride=stride if i == 0 else 1,
                ))
                in_channels = out_channels
        self.bottlenecks = Sequential(f"{name}.bottlenecks", store, blocks)
        # Desk-scale inputs reach this point at 2x2, below the largest bin
        self.ppm = PyramidPooling(f"{name}.ppm", store, in_channels, rng, strict=False)

    @staticmethod
    def check_input(shape: Shape) -> None:
        if len(shape) != 4 or shape[1] != 1:
            raise ShapeError(f"encoder expects (N, 1, H, W) frames, got {tuple(shape)}")
        if shape[2] % 32 or shape[3] % 32 or shape[2] == 0 or shape[3] == 0:
            raise ShapeError(f"frame extents must be positive multiples of 32, got {shape[2]}x{shape[3]}")

    def forward(self, x, train=False):
        self.check_input(x.shape)
        low, low_cache = self.downsample.forward(x, train)
        deep, deep_cache = self.bottlenecks.forward(low, train)
        high, ppm_cache = self.ppm.forward(deep, train)
        return (low, high), (low_cache, deep_cache, ppm_cache)

    def backward(self, dy, cache):
        dlow, dhigh = dy
        low_cache, deep_cache, ppm_cache = cache
        ddeep = self.ppm.backward(dhigh, ppm_cache)
        dlow = dlow + self.bottlenecks.backward(ddeep, deep_cache)
        return self.downsample.backward(dlow, low_cache)

    def output_shape(self, shape):
        self.check_input(shape)
        low = self.downsample.output_shape(shape)
        return low, self.ppm.output_shape(self.bottlenecks.output_shape(low))

    def macs(self, shape):
        self.check_input(shape)
        low = self.downsample.output_shape(shape)
        deep = self.bottlenecks.output_shape(low)
        return self.downsample.macs(shape) + self.bottlenecks.macs(low) + self.ppm.macs(deep)


class ChannelAttentionFusion(Layer):
    """
    Concatenated streams -> GAP -> W2 ReLU(W1 z) -> sigmoid gates -> channel
    scale -> depthwise-separable 3x3 conv to 128 channels.

    The output conv is depthwise-separable rather than a dense 3x3 256->128
    conv. The dense form holds about 295k weights against about 35k here and
    would push the fume variant past its 1.5M parameter target.

    With ``gated=False`` the gating is skipped (plain concat + conv).
    """

    def __init__(self, name: str, store: ParamStore, rng: np.random.Generator,
                 channels: int = FUSED_CHANNELS, reduction: int = 16, out_channels: int = HIGH_CHANNELS,
                 gated: bool = True):
        spec = KernelSpec(KernelKind.HADAMARD, in_channels=channels, out_channels=out_channels)
        super().__init__(name, store, spec)
        self.gated = gated
        if gated:
            hidden = channels // reduction
            self.pool = GlobalAvgPool(f"{name}.pool", store)
            self.mlp = Sequential(f"{name}.mlp", store, [
                Linear(f"{name}.mlp.fc1", store, channels, hidden, rng),
                ReLU(f"{name}.mlp.relu", store),
                Linear(f"{name}.mlp.fc2", store, hidden, channels, rng),
                Sigmoid(f"{name}.mlp.sigmoid", store),
            ])
        self.conv = DSConv(f"{name}.conv", store, channels, out_channels, rng)

    def gates(self, x: Tensor) -> Tensor:
        """Sigmoid channel gates in (0, 1) for a concatenated input."""
        return self.mlp(self.pool(x))

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(f"{self.name}: expected (N, {self.spec.in_channels}, h, w), got {x.shape}")
        gate_cache = None
        if self.gated:
            pooled, pool_cache = self.pool.forward(x, train)
            gates, mlp_cache = self.mlp.forward(pooled, train)
            x_scaled, scale_cache = F.hadamard_forward(x, gates)
            gate_cache = (pool_cache, mlp_cache, scale_cache)
        else:
            x_scaled = x
        y, conv_cache = self.conv.forward(x_scaled, train)
        return y, (gate_cache, conv_cache)

    def backward(self, dy, cache):
        gate_cache, conv_cache = cache
        dx = self.conv.backward(dy, conv_cache)
        if not self.gated:
            return dx
        pool_cache, mlp_cache, scale_cache = gate_cache
        dx, dgates = F.hadamard_backward(dx, scale_cache)
        dpooled = self.mlp.backward(dgates, mlp_cache)
        return dx + self.pool.backward(dpooled, pool_cache)

    def output_shape(self, shape):
        return self.conv.output_shape(shape)

    def macs(self, shape):
        total = self.conv.macs(shape)
        if self.gated:
            total += self.mlp.macs(self.pool.output_shape(shape))
        return total


class FeatureFusionDecoder(Layer):
    """
    Upsample ``F_h`` x4, depthwise 3x3 + 1x1 to ``width``; project ``F_l`` by
    1x1 to ``width``; add and ReLU; then DSConv, DSConv, 1x1 to 3 classes and
    bilinear x8 back to the frame resolution.
    """

    def __init__(self, name: str, store: ParamStore, rng: np.random.Generator, width: int = DECODER_WIDTH,
                 num_classes: int = NUM_CLASSES):
        spec = KernelSpec(KernelKind.ADD, in_channels=HIGH_CHANNELS, out_channels=num_classes)
        super().__init__(name, store, spec)
        self.high = Sequential(f"{name}.high", store, [
            conv_bn(f"{name}.high.dw", store, HIGH_CHANNELS, HIGH_CHANNELS, 3, rng, groups=HIGH_CHANNELS),
            conv_bn(f"{name}.high.pw", store, HIGH_CHANNELS, width, 1, rng, relu=False),
        ])
        self.low = conv_bn(f"{name}.low", store, LOW_CHANNELS, width, 1, rng, relu=False)
        self.classifier = Sequential(f"{name}.classifier", store, [
            DSConv(f"{name}.classifier.ds1", store, width, width, rng),
            DSConv(f"{name}.classifier.ds2", store, width, width, rng),
            Conv2d(f"{name}.classifier.out", store, width, num_classes, 1, rng, bias=True),
        ])

    def forward(self, x, train=False):
        low_x, high_x = x
        up, up_cache = F.bilinear_resize_forward(high_x, (high_x.shape[2] * 4, high_x.shape[3] * 4))
        if up.shape[2:] != low_x.shape[2:]:
            raise ShapeError(f"{self.name}: upsampled {up.shape[2:]} does not match low-level {low_x.shape[2:]}")
        h, high_cache = self.high.forward(up, train)
        l, low_cache = self.low.forward(low_x, train)
        merged, relu_cache = F.relu_forward(h + l)
        scores, cls_cache = self.classifier.forward(merged, train)
        out, out_cache = F.bilinear_resize_forward(scores, (scores.shape[2] * 8, scores.shape[3] * 8))
        return out, (up_cache, high_cache, low_cache, relu_cache, cls_cache, out_cache)

    def backward(self, dy, cache):
        up_cache, high_cache, low_cache, relu_cache, cls_cache, out_cache = cache
        dscores = F.bilinear_resize_backward(dy, out_cache)
        dmerged = F.relu_backward(self.classifier.backward(dscores, cls_cache), relu_cache)
        dlow = self.low.backward(dmerged, low_cache)
        dhigh = F.bilinear_resize_backward(self.high.backward(dmerged, high_cache), up_cache)
        return dlow, dhigh

    def output_shape(self, shape):
        n, _, h, w = shape
        return (n, self.spec.out_channels, h * 32, w * 32)

    def macs(self, shape, low_shape=None):
        """MACs for an ``F_h`` of ``shape``; ``F_l`` is assumed at 4x its extent."""
        n, c, h, w = shape
        up = (n, c, h * 4, w * 4)
        low = low_shape or (n, LOW_CHANNELS, h * 4, w * 4)
        return self.high.macs(up) + self.low.macs(low) + self.classifier.macs(self.low.output_shape(low))


class ClassificationHead(Sequential):
    """GAP -> linear 128->64 -> ReLU -> dropout -> linear 64->3."""

    def __init__(self, name: str, store: ParamStore, rng: np.random.Generator, dropout_rng: np.random.Generator,
                 channels: int = HIGH_CHANNELS, hidden: int = 64, keep_prob: float = 0.7,
                 num_classes: int = NUM_CLASSES):
        super().__init__(name, store, [
            GlobalAvgPool(f"{name}.pool", store),
            Linear(f"{name}.fc1", store, channels, hidden, rng),
            ReLU(f"{name}.relu", store),
            Dropout(f"{name}.dropout", store, keep_prob, dropout_rng),
            Linear(f"{name}.fc2", store, hidden, num_classes, rng),
        ])
