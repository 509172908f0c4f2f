"""fume/kernels/layers.py

Parameterised layers built on the pure kernels.

A layer owns parameter *names*, never arrays: the arrays live in a shared
``ParamStore`` so that one set of weights can be referenced from several
call sites (the shared encoder runs once per modality). ``forward``
returns ``(output, cache)``; the cache belongs to that call only, and
``backward(dy, cache)`` accumulates parameter gradients into the store and
returns the input gradient.
"""

import logging
import math
from collections import OrderedDict
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from fume.errors import ShapeError
from fume.kernels import functional as F
from fume.kernels.spec import KernelKind, KernelSpec, Shape

logger = logging.getLogger(__name__)

Tensor = np.ndarray


class ParamStore:
    """Named parameter tensors, their gradients and non-trainable buffers."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.grads: Dict[str, Tensor] = {}
        self.buffers: "OrderedDict[str, Tensor]" = OrderedDict()
        self.frozen: set = set()

    def add(self, name: str, value: Tensor) -> str:
        if name in self.params or name in self.buffers:
            raise ValueError(f"duplicate parameter name {name!r}")
        self.params[name] = np.ascontiguousarray(value, dtype=self.dtype)
        self.grads[name] = np.zeros_like(self.params[name])
        return name

    def add_buffer(self, name: str, value: Tensor) -> str:
        if name in self.params or name in self.buffers:
            raise ValueError(f"duplicate buffer name {name!r}")
        self.buffers[name] = np.ascontiguousarray(value, dtype=self.dtype)
        return name

    def __getitem__(self, name: str) -> Tensor:
        if name in self.params:
            return self.params[name]
        return self.buffers[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params or name in self.buffers

    def accumulate(self, name: str, grad: Tensor) -> None:
        if name in self.frozen:
            return
        self.grads[name] += grad

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def freeze(self, *names: str) -> None:
        for name in names:
            if name not in self.params:
                raise KeyError(name)
            self.frozen.add(name)

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def state(self) -> "OrderedDict[str, Tensor]":
        """Parameters followed by buffers, in registration order."""
        state = OrderedDict(self.params)
        state.update(self.buffers)
        return state

    def load_state(self, state: Dict[str, Tensor]) -> None:
        expected = set(self.params) | set(self.buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise KeyError(f"state mismatch; missing={missing[:5]} unexpected={extra[:5]}")
        for name, value in state.items():
            target = self[name]
            if target.shape != tuple(value.shape):
                raise ShapeError(f"{name}: expected shape {target.shape}, got {tuple(value.shape)}")
            target[...] = value


def kaiming_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> Tensor:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=tuple(shape))


def bias_uniform(rng: np.random.Generator, size: int, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(size,))


class Layer:
    """Base class: a named kernel bound to a parameter store."""

    def __init__(self, name: str, store: ParamStore, spec: KernelSpec):
        self.name = name
        self.store = store
        self.spec = spec

    def forward(self, x: Tensor, train: bool = False) -> Tuple[Tensor, Any]:
        raise NotImplementedError

    def backward(self, dy: Tensor, cache: Any) -> Tensor:
        raise NotImplementedError

    def output_shape(self, shape: Shape) -> Shape:
        return self.spec.infer_shape(shape)

    def macs(self, shape: Shape) -> int:
        return self.spec.macs(shape)

    def parameter_names(self) -> List[str]:
        prefix = self.name + "."
        return [n for n in self.store.params if n.startswith(prefix)]

    def __call__(self, x: Tensor, train: bool = False) -> Tensor:
        return self.forward(x, train)[0]

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name} {self.spec.kind.value}>"


class Conv2d(Layer):
    def __init__(
        self,
        name: str,
        store: ParamStore,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: Optional[int] = None,
        groups: int = 1,
        dilation: int = 1,
        bias: bool = False,
    ):
        padding = kernel_size // 2 * dilation if padding is None else padding
        spec = KernelSpec(
            KernelKind.CONV,
            in_channels=in_channels,
            out_channels=out_channels,
            kernel_size=kernel_size,
            stride=stride,
            padding=padding,
            groups=groups,
            dilation=dilation,
            bias=bias,
        )
        super().__init__(name, store, spec)
        if in_channels % groups or out_channels % groups:
            raise ShapeError(f"{name}: groups={groups} must divide {in_channels} and {out_channels}")
        fan_in = in_channels // groups * kernel_size * kernel_size
        self.weight = store.add(
            f"{name}.weight",
            kaiming_uniform(rng, (out_channels, in_channels // groups, kernel_size, kernel_size), fan_in),
        )
        self.bias = store.add(f"{name}.bias", bias_uniform(rng, out_channels, fan_in)) if bias else None

    def forward(self, x, train=False):
        s = self.spec
        bias = self.store[self.bias] if self.bias else None
        return F.conv2d_forward(x, self.store[self.weight], bias, s.stride, s.padding, s.groups, s.dilation)

    def backward(self, dy, cache):
        dx, dw, db = F.conv2d_backward(dy, cache)
        self.store.accumulate(self.weight, dw)
        if self.bias:
            self.store.accumulate(self.bias, db)
        return dx


class BatchNorm2d(Layer):
    def __init__(self, name: str, store: ParamStore, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__(name, store, KernelSpec(KernelKind.BATCH_NORM, in_channels=channels, out_channels=channels))
        self.momentum = momentum
        self.eps = eps
        self.gamma = store.add(f"{name}.gamma", np.ones(channels))
        self.beta = store.add(f"{name}.beta", np.zeros(channels))
        self.running_mean = store.add_buffer(f"{name}.running_mean", np.zeros(channels))
        self.running_var = store.add_buffer(f"{name}.running_var", np.ones(channels))

    def forward(self, x, train=False):
        st = self.store
        return F.batch_norm_forward(
            x, st[self.gamma], st[self.beta], st[self.running_mean], st[self.running_var],
            train, self.momentum, self.eps,
        )

    def backward(self, dy, cache):
        dx, dgamma, dbeta = F.batch_norm_backward(dy, cache)
        self.store.accumulate(self.gamma, dgamma)
        self.store.accumulate(self.beta, dbeta)
        return dx


class ReLU(Layer):
    def __init__(self, name: str, store: ParamStore):
        super().__init__(name, store, KernelSpec(KernelKind.RELU))

    def forward(self, x, train=False):
        return F.relu_forward(x)

    def backward(self, dy, cache):
        return F.relu_backward(dy, cache)


class Sigmoid(Layer):
    def __init__(self, name: str, store: ParamStore):
        super().__init__(name, store, KernelSpec(KernelKind.SIGMOID))

    def forward(self, x, train=False):
        return F.sigmoid_forward(x)

    def backward(self, dy, cache):
        return F.sigmoid_backward(dy, cache)


class Linear(Layer):
    def __init__(self, name: str, store: ParamStore, in_features: int, out_features: int,
                 rng: np.random.Generator, bias: bool = True):
        spec = KernelSpec(KernelKind.LINEAR, in_channels=in_features, out_channels=out_features, bias=bias)
        super().__init__(name, store, spec)
        self.weight = store.add(f"{name}.weight", kaiming_uniform(rng, (out_features, in_features), in_features))
        self.bias = store.add(f"{name}.bias", bias_uniform(rng, out_features, in_features)) if bias else None

    def forward(self, x, train=False):
        bias = self.store[self.bias] if self.bias else None
        return F.linear_forward(x, self.store[self.weight], bias)

    def backward(self, dy, cache):
        dx, dw, db = F.linear_backward(dy, cache)
        self.store.accumulate(self.weight, dw)
        if self.bias:
            self.store.accumulate(self.bias, db)
        return dx


class Dropout(Layer):
    """Inverted dropout drawing masks from a generator owned by the network."""

    def __init__(self, name: str, store: ParamStore, keep_prob: float, rng: np.random.Generator):
        if not 0.0 < keep_prob <= 1.0:
            raise ValueError(f"keep_prob must lie in (0, 1], got {keep_prob}")
        super().__init__(name, store, KernelSpec(KernelKind.DROPOUT, keep_prob=keep_prob))
        self.rng = rng

    def forward(self, x, train=False):
        return F.dropout_forward(x, self.spec.keep_prob, train, self.rng)

    def backward(self, dy, cache):
        return F.dropout_backward(dy, cache)


class GlobalAvgPool(Layer):
    def __init__(self, name: str, store: ParamStore):
        super().__init__(name, store, KernelSpec(KernelKind.GLOBAL_AVG_POOL))

    def forward(self, x, train=False):
        return F.global_avg_pool_forward(x)

    def backward(self, dy, cache):
        return F.global_avg_pool_backward(dy, cache)


class AdaptiveAvgPool(Layer):
    def __init__(self, name: str, store: ParamStore, size: int):
        super().__init__(name, store, KernelSpec(KernelKind.ADAPTIVE_AVG_POOL, size=(size, size)))

    def forward(self, x, train=False):
        return F.adaptive_avg_pool_forward(x, self.spec.size)

    def backward(self, dy, cache):
        return F.adaptive_avg_pool_backward(dy, cache)


class BilinearResize(Layer):
    """Resize by an integer ``scale`` or to a fixed ``size``."""

    def __init__(self, name: str, store: ParamStore, scale: int = 0, size: Tuple[int, int] = (0, 0)):
        if scale <= 0 and min(size) <= 0:
            raise ShapeError(f"{name}: resize needs a positive scale or size")
        super().__init__(name, store, KernelSpec(KernelKind.BILINEAR_RESIZE, scale=scale, size=tuple(size)))

    def forward(self, x, train=False):
        return F.bilinear_resize_forward(x, self.output_shape(x.shape)[-2:])

    def backward(self, dy, cache):
        return F.bilinear_resize_backward(dy, cache)


class Sequential(Layer):
    """Layers applied in order; shapes and MACs are chained."""

    def __init__(self, name: str, store: ParamStore, layers: Iterable[Layer], spec: Optional[KernelSpec] = None):
        self.layers = list(layers)
        super().__init__(name, store, spec or self.layers[0].spec)

    def forward(self, x, train=False):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, train)
            caches.append(cache)
        return x, caches

    def backward(self, dy, cache):
        for layer, c in zip(reversed(self.layers), reversed(cache)):
            dy = layer.backward(dy, c)
        return dy

    def output_shape(self, shape):
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def macs(self, shape):
        total = 0
        for layer in self.layers:
            total += layer.macs(shape)
            shape = layer.output_shape(shape)
        return total


def conv_bn(name: str, store: ParamStore, in_channels: int, out_channels: int, kernel_size: int,
            rng: np.random.Generator, stride: int = 1, groups: int = 1, relu: bool = True) -> Sequential:
    """Conv (no bias) -> BatchNorm -> optional ReLU."""
    layers: List[Layer] = [
        Conv2d(f"{name}.conv", store, in_channels, out_channels, kernel_size, rng, stride=stride, groups=groups),
        BatchNorm2d(f"{name}.bn", store, out_channels),
    ]
    if relu:
        layers.append(ReLU(f"{name}.relu", store))
    return Sequential(name, store, layers)


class DSConv(Sequential):
    """Depthwise 3x3 (BN, ReLU) then pointwise 1x1 (BN, ReLU)."""

    def __init__(self, name: str, store: ParamStore, in_channels: int, out_channels: int,
                 rng: np.random.Generator, stride: int = 1, kernel_size: int = 3):
        layers = [
            conv_bn(f"{name}.dw", store, in_channels, in_channels, kernel_size, rng, stride=stride, groups=in_channels),
            conv_bn(f"{name}.pw", store, in_channels, out_channels, 1, rng),
        ]
        spec = KernelSpec(KernelKind.DSCONV, in_channels=in_channels, out_channels=out_channels,
                          kernel_size=kernel_size, stride=stride, padding=kernel_size // 2)
        super().__init__(name, store, layers, spec)


class InvertedResidual(Layer):
    """Expand 1x1 -> depthwise 3x3 (carries the stride) -> linear project 1x1."""

    def __init__(self, name: str, store: ParamStore, in_channels: int, out_channels: int,
                 rng: np.random.Generator, stride: int = 1, expansion: int = 6):
        if stride not in (1, 2):
            raise ShapeError(f"{name}: inverted residual stride must be 1 or 2, got {stride}")
        spec = KernelSpec(KernelKind.INVERTED_RESIDUAL, in_channels=in_channels, out_channels=out_channels,
                          kernel_size=3, stride=stride, padding=1, expansion=expansion)
        super().__init__(name, store, spec)
        hidden = in_channels * expansion
        self.body = Sequential(name, store, [
            conv_bn(f"{name}.expand", store, in_channels, hidden, 1, rng),
            conv_bn(f"{name}.dw", store, hidden, hidden, 3, rng, stride=stride, groups=hidden),
            conv_bn(f"{name}.project", store, hidden, out_channels, 1, rng, relu=False),
        ])
        self.use_skip = stride == 1 and in_channels == out_channels

    def forward(self, x, train=False):
        y, cache = self.body.forward(x, train)
        if self.use_skip:
            y = y + x
        return y, cache

    def backward(self, dy, cache):
        dx = self.body.backward(dy, cache)
        if self.use_skip:
            dx = dx + dy
        return dx

    def macs(self, shape):
        return self.body.macs(shape)


class PyramidPooling(Layer):
    """
    Adaptive pooling branches at ``scales``, each 1x1 conv to C/4 with BN and
    ReLU, resized back and concatenated with the input, then fused by a 1x1
    conv back to C channels.

    With ``strict`` the input must be at least as large as the largest
    scale; otherwise adaptive bins may repeat cells on small maps.
    """

    def __init__(self, name: str, store: ParamStore, channels: int, rng: np.random.Generator,
                 scales: Sequence[int] = (1, 2, 3, 6), strict: bool = True):
        spec = KernelSpec(KernelKind.PYRAMID_POOLING, in_channels=channels, out_channels=channels,
                          scales=tuple(scales))
        super().__init__(name, store, spec)
        self.strict = strict
        branch = channels // 4
        self.pools = [AdaptiveAvgPool(f"{name}.pool{s}", store, s) for s in scales]
        self.branches = [conv_bn(f"{name}.branch{s}", store, channels, branch, 1, rng) for s in scales]
        self.fuse = conv_bn(f"{name}.fuse", store, channels + branch * len(scales), channels, 1, rng)

    def _check(self, shape):
        if self.strict and min(shape[2:]) < max(self.spec.scales):
            raise ShapeError(
                f"{self.name}: input {shape[2]}x{shape[3]} is smaller than pooling scale {max(self.spec.scales)}"
            )

    def forward(self, x, train=False):
        self._check(x.shape)
        size = x.shape[2:]
        parts = [x]
        caches = []
        for pool, branch in zip(self.pools, self.branches):
            pooled, pool_cache = pool.forward(x, train)
            proj, branch_cache = branch.forward(pooled, train)
            up, up_cache = F.bilinear_resize_forward(proj, size)
            parts.append(up)
            caches.append((pool_cache, branch_cache, up_cache))
        y, fuse_cache = self.fuse.forward(np.concatenate(parts, axis=1), train)
        return y, (caches, fuse_cache, x.shape[1])

    def backward(self, dy, cache):
        caches, fuse_cache, channels = cache
        dcat = self.fuse.backward(dy, fuse_cache)
        dx = dcat[:, :channels].copy()
        offset = channels
        for pool, branch, (pool_cache, branch_cache, up_cache) in zip(self.pools, self.branches, caches):
            width = branch.layers[0].spec.out_channels
            dup = dcat[:, offset:offset + width]
            offset += width
            dproj = F.bilinear_resize_backward(dup, up_cache)
            dpooled = branch.backward(dproj, branch_cache)
            dx += pool.backward(dpooled, pool_cache)
        return dx

    def output_shape(self, shape):
        self._check(shape)
        return self.spec.infer_shape(shape)

    def macs(self, shape):
        self._check(shape)
        total = 0
        for pool, branch in zip(self.pools, self.branches):
            pooled = pool.output_shape(shape)
            total += branch.macs(pooled)
        cat = (shape[0], self.fuse.layers[0].spec.in_channels) + tuple(shape[2:])
        return total + self.fuse.macs(cat)


class Attention(Layer):
    """
    Gamma-gated non-local attention: ``query_x + gamma * Attn(query_x, context_x)``.

    Queries come from ``query_x``; keys and values from ``context_x``. With
    both the same tensor this is self-attention. ``gamma`` starts at 0, so a
    fresh block is an exact identity.
    """

    def __init__(self, name: str, store: ParamStore, channels: int, rng: np.random.Generator,
                 key_channels: Optional[int] = None):
        key_channels = key_channels or channels // 8
        spec = KernelSpec(KernelKind.ATTENTION, in_channels=channels, out_channels=channels,
                          inner_channels=key_channels)
        super().__init__(name, store, spec)
        self.query = Conv2d(f"{name}.query", store, channels, key_channels, 1, rng, bias=True)
        self.key = Conv2d(f"{name}.key", store, channels, key_channels, 1, rng, bias=True)
        self.value = Conv2d(f"{name}.value", store, channels, channels, 1, rng, bias=True)
        self.gamma = store.add(f"{name}.gamma", np.zeros(1))

    def attend(self, query_x: Tensor, context_x: Optional[Tensor] = None, train: bool = False) -> Tuple[Tensor, Any]:
        context_x = query_x if context_x is None else context_x
        if query_x.shape[:2] != context_x.shape[:2]:
            raise ShapeError(f"{self.name}: query {query_x.shape} and context {context_x.shape} disagree")
        n, c, h, w = query_x.shape
        q, q_cache = self.query.forward(query_x, train)
        k, k_cache = self.key.forward(context_x, train)
        v, v_cache = self.value.forward(context_x, train)
        out, attn_cache = F.attention_forward(
            q.reshape(n, q.shape[1], h * w),
            k.reshape(n, k.shape[1], -1),
            v.reshape(n, c, -1),
        )
        return out.reshape(n, c, h, w), (q_cache, k_cache, v_cache, attn_cache, q.shape, k.shape, v.shape)

    def forward(self, x, train=False, context=None):
        attended, attend_cache = self.attend(x, context, train)
        gamma = self.store[self.gamma]
        return x + gamma[0] * attended, (attended, attend_cache, context is None)

    def backward(self, dy, cache):
        """
        Input gradient of self-attention.

        Raises:
            ShapeError: For a cross-attention cache; use ``backward_pair``
        """
        if not cache[2]:
            raise ShapeError(f"{self.name}: query and context gradients are separate; use backward_pair")
        return self.backward_pair(dy, cache)[0]

    def backward_pair(self, dy: Tensor, cache: Any) -> Tuple[Tensor, Optional[Tensor]]:
        """Split gradient ``(d_query_x, d_context_x)``; the second is None for self-attention."""
        attended, (q_cache, k_cache, v_cache, attn_cache, q_shape, k_shape, v_shape), is_self = cache
        gamma = self.store[self.gamma][0]
        self.store.accumulate(self.gamma, np.array([(dy * attended).sum()]))
        dattended = gamma * dy
        n = dy.shape[0]
        dq, dk, dv = F.attention_backward(dattended.reshape(n, dy.shape[1], -1), attn_cache)
        dquery = dy + self.query.backward(dq.reshape(q_shape), q_cache)
        dcontext = self.key.backward(dk.reshape(k_shape), k_cache) + self.value.backward(dv.reshape(v_shape), v_cache)
        if is_self:
            return dquery + dcontext, None
        return dquery, dcontext

    def output_shape(self, shape):
        return self.spec.infer_shape(shape)

    def macs(self, shape, context_shape=None):
        return self.spec.macs(shape, context_shape or shape)
