"""fume/kernels/functional.py

Pure forward/backward kernels over NCHW numpy arrays.

Every ``*_forward`` returns ``(output, cache)`` and the matching
``*_backward`` consumes the upstream gradient together with that cache.
Nothing here holds state; parameters are passed in and parameter
gradients are returned. The only in-place write is the BatchNorm running
statistics update in train mode.

Conventions:
    - "same" padding is ``kernel // 2``; a stride-2 conv then yields
      ``ceil(H / 2)`` rows.
    - bilinear resize uses half-pixel centres (``align_corners=False``).
    - adaptive pooling bins are ``[floor(i*H/o), ceil((i+1)*H/o))``.
"""

import math
from typing import Any, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import expit

from fume.errors import ShapeError

Tensor = np.ndarray


def conv_output_extent(extent: int, kernel: int, stride: int = 1, padding: int = 0, dilation: int = 1) -> int:
    """Standard cross-correlation output arithmetic."""
    return (extent + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def _pad(x: Tensor, padding: int) -> Tensor:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _window(i: int, dilation: int, stride: int, count: int) -> slice:
    start = i * dilation
    return slice(start, start + stride * (count - 1) + 1, stride)


def _check_conv(x: Tensor, weight: Tensor, stride: int, padding: int, groups: int, dilation: int) -> Tuple[int, int]:
    if x.ndim != 4:
        raise ShapeError(f"conv input must be rank 4 (N, C, H, W), got shape {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"conv weight must be rank 4 (O, C/groups, K, K), got shape {weight.shape}")
    c_in = x.shape[1]
    c_out, c_group = weight.shape[:2]
    if groups < 1 or c_in % groups or c_out % groups:
        raise ShapeError(f"groups={groups} must divide input channels {c_in} and output channels {c_out}")
    if c_group * groups != c_in:
        raise ShapeError(
            f"input has {c_in} channels but weight expects {c_group * groups} "
            f"({c_group} per group x {groups} groups)"
        )
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    ho = conv_output_extent(x.shape[2], weight.shape[2], stride, padding, dilation)
    wo = conv_output_extent(x.shape[3], weight.shape[3], stride, padding, dilation)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"input {x.shape[2]}x{x.shape[3]} too small for kernel {weight.shape[2]}x{weight.shape[3]}")
    return ho, wo


def conv2d_forward(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
    dilation: int = 1,
) -> Tuple[Tensor, Any]:
    """
    Grouped 2-D cross-correlation.

    Three paths share one contract: a 1x1 stride-1 matmul, a depthwise
    shifted-sum (groups == C_in == C_out) and a general im2col path.

    Args:
        x: Input of shape (N, C_in, H, W)
        weight: Kernel of shape (C_out, C_in / groups, KH, KW)
        bias: Optional (C_out,) bias
        stride, padding, groups, dilation: Usual conv hyperparameters

    Returns:
        Output of shape (N, C_out, H', W') and the backward cache

    Raises:
        ShapeError: When channels or extents do not fit the kernel
    """
    ho, wo = _check_conv(x, weight, stride, padding, groups, dilation)
    n, c_in, h, w = x.shape
    c_out, c_group, kh, kw = weight.shape

    if kh == 1 and kw == 1 and stride == 1 and padding == 0 and groups == 1:
        path = "pointwise"
        y = np.matmul(weight.reshape(c_out, c_in), x.reshape(n, c_in, h * w)).reshape(n, c_out, h, w)
        saved = x
    elif groups == c_in and c_out == c_in:
        path = "depthwise"
        xp = _pad(x, padding)
        y = np.zeros((n, c_out, ho, wo), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, :, _window(i, dilation, stride, ho), _window(j, dilation, stride, wo)]
                y += patch * weight[:, 0, i, j][None, :, None, None]
        saved = xp
    else:
        path = "general"
        xp = _pad(x, padding)
        sn, sc, sh, sw = xp.strides
        patches = as_strided(
            xp,
            shape=(n, c_in, kh, kw, ho, wo),
            strides=(sn, sc, dilation * sh, dilation * sw, stride * sh, stride * sw),
            writeable=False,
        )
        cols = patches.reshape(n, groups, c_group * kh * kw, ho * wo)
        wmat = weight.reshape(groups, c_out // groups, c_group * kh * kw)
        y = np.matmul(wmat[None], cols).reshape(n, c_out, ho, wo)
        saved = cols

    if bias is not None:
        y = y + bias[None, :, None, None]

    cache = (path, saved, x.shape, weight, bias is not None, stride, padding, groups, dilation)
    return y, cache


def conv2d_backward(dy: Tensor, cache: Any) -> Tuple[Tensor, Tensor, Optional[Tensor]]:
    """Return ``(dx, dweight, dbias)``; ``dbias`` is None when the conv has no bias."""
    path, saved, x_shape, weight, has_bias, stride, padding, groups, dilation = cache
    n, c_in, h, w = x_shape
    c_out, c_group, kh, kw = weight.shape
    ho, wo = dy.shape[2:]

    if path == "pointwise":
        dyf = dy.reshape(n, c_out, ho * wo)
        xf = saved.reshape(n, c_in, h * w)
        dw = np.tensordot(dyf, xf, axes=([0, 2], [0, 2])).reshape(weight.shape)
        dx = np.matmul(weight.reshape(c_out, c_in).T, dyf).reshape(x_shape)
    elif path == "depthwise":
        xp = saved
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(weight)
        for i in range(kh):
            for j in range(kw):
                rows, cols = _window(i, dilation, stride, ho), _window(j, dilation, stride, wo)
                dw[:, 0, i, j] = np.einsum('nchw,nchw->c', dy, xp[:, :, rows, cols])
                dxp[:, :, rows, cols] += dy * weight[:, 0, i, j][None, :, None, None]
        dx = dxp[:, :, padding:padding + h, padding:padding + w]
    else:
        cols = saved
        og = c_out // groups
        dyg = dy.reshape(n, groups, og, ho * wo)
        dw = np.matmul(dyg, cols.transpose(0, 1, 3, 2)).sum(axis=0).reshape(weight.shape)
        wmat = weight.reshape(groups, og, c_group * kh * kw)
        dcols = np.matmul(wmat.transpose(0, 2, 1)[None], dyg).reshape(n, c_in, kh, kw, ho, wo)
        dxp = np.zeros((n, c_in, h + 2 * padding, w + 2 * padding), dtype=dy.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, _window(i, dilation, stride, ho), _window(j, dilation, stride, wo)] += dcols[:, :, i, j]
        dx = dxp[:, :, padding:padding + h, padding:padding + w]

    db = dy.sum(axis=(0, 2, 3)) if has_bias else None
    return np.ascontiguousarray(dx), dw, db


def dsconv_forward(x: Tensor, dw_weight: Tensor, pw_weight: Tensor, stride: int = 1) -> Tuple[Tensor, Any]:
    """Depthwise KxK conv ("same" padding) followed by a pointwise 1x1 conv."""
    c_in = x.shape[1] if x.ndim == 4 else -1
    if dw_weight.shape[0] != c_in or dw_weight.shape[1] != 1:
        raise ShapeError(f"depthwise weight {dw_weight.shape} does not match {c_in} input channels")
    if pw_weight.shape[2:] != (1, 1):
        raise ShapeError(f"pointwise weight must be 1x1, got {pw_weight.shape}")
    mid, dw_cache = conv2d_forward(x, dw_weight, stride=stride, padding=dw_weight.shape[2] // 2, groups=c_in)
    y, pw_cache = conv2d_forward(mid, pw_weight)
    return y, (dw_cache, pw_cache)


def dsconv_backward(dy: Tensor, cache: Any) -> Tuple[Tensor, Tensor, Tensor]:
    """Return ``(dx, d_dw_weight, d_pw_weight)``."""
    dw_cache, pw_cache = cache
    dmid, dpw, _ = conv2d_backward(dy, pw_cache)
    dx, ddw, _ = conv2d_backward(dmid, dw_cache)
    return dx, ddw, dpw


def _bn_axes(x: Tensor) -> Tuple[int, ...]:
    if x.ndim == 4:
        return (0, 2, 3)
    if x.ndim == 2:
        return (0,)
    raise ShapeError(f"batch_norm expects rank 2 or 4 input, got shape {x.shape}")


def _bn_view(v: Tensor, ndim: int) -> Tensor:
    return v[None, :, None, None] if ndim == 4 else v[None, :]


def batch_norm_forward(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    train: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tuple[Tensor, Any]:
    """
    Batch normalisation over every axis but channels.

    In train mode batch statistics are used and the running buffers are
    updated in place (unbiased variance, as is conventional); in eval mode
    the running statistics are used and nothing is written.
    """
    axes = _bn_axes(x)
    if train:
        count = x.size // x.shape[1]
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        unbiased = var * count / (count - 1) if count > 1 else var
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean = running_mean.copy()
        var = running_var.copy()
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - _bn_view(mean, x.ndim)) * _bn_view(inv_std, x.ndim)
    y = xhat * _bn_view(gamma, x.ndim) + _bn_view(beta, x.ndim)
    return y, (xhat, inv_std, gamma, train)


def batch_norm_backward(dy: Tensor, cache: Any) -> Tuple[Tensor, Tensor, Tensor]:
    """Return ``(dx, dgamma, dbeta)``."""
    xhat, inv_std, gamma, train = cache
    axes = _bn_axes(dy)
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * _bn_view(gamma, dy.ndim)
    if not train:
        return dxhat * _bn_view(inv_std, dy.ndim), dgamma, dbeta
    count = dy.size // dy.shape[1]
    dx = (
        count * dxhat
        - _bn_view(dxhat.sum(axis=axes), dy.ndim)
        - xhat * _bn_view((dxhat * xhat).sum(axis=axes), dy.ndim)
    ) * _bn_view(inv_std / count, dy.ndim)
    return dx, dgamma, dbeta


def relu_forward(x: Tensor) -> Tuple[Tensor, Tensor]:
    mask = x > 0
    return x * mask, mask


def relu_backward(dy: Tensor, cache: Tensor) -> Tensor:
    return dy * cache


def sigmoid_forward(x: Tensor) -> Tuple[Tensor, Tensor]:
    y = expit(x)
    return y, y


def sigmoid_backward(dy: Tensor, cache: Tensor) -> Tensor:
    return dy * cache * (1.0 - cache)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; entries along ``axis`` sum to one."""
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_forward(x: Tensor, axis: int = -1) -> Tuple[Tensor, Any]:
    y = softmax(x, axis)
    return y, (y, axis)


def softmax_backward(dy: Tensor, cache: Any) -> Tensor:
    y, axis = cache
    return y * (dy - (dy * y).sum(axis=axis, keepdims=True))


def interpolation_matrix(in_size: int, out_size: int, dtype=np.float64) -> Tensor:
    """Row-stochastic (out_size, in_size) bilinear weights, half-pixel centres."""
    if in_size <= 0 or out_size <= 0:
        raise ShapeError(f"resize extents must be positive, got {in_size} -> {out_size}")
    m = np.zeros((out_size, in_size), dtype=dtype)
    scale = in_size / out_size
    for i in range(out_size):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        lo = min(int(math.floor(src)), in_size - 1)
        hi = min(lo + 1, in_size - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


def bilinear_resize_forward(x: Tensor, size: Sequence[int]) -> Tuple[Tensor, Any]:
    """Resize the two trailing axes of ``x`` to ``size`` = (H', W')."""
    out_h, out_w = int(size[0]), int(size[1])
    if out_h <= 0 or out_w <= 0:
        raise ShapeError(f"cannot resize to non-positive size {out_h}x{out_w}")
    mh = interpolation_matrix(x.shape[-2], out_h, x.dtype)
    mw = interpolation_matrix(x.shape[-1], out_w, x.dtype)
    y = np.matmul(np.matmul(mh, x), mw.T)
    return y, (mh, mw)


def bilinear_resize_backward(dy: Tensor, cache: Any) -> Tensor:
    mh, mw = cache
    return np.matmul(mh.T, np.matmul(dy, mw))


def pooling_matrix(in_size: int, out_size: int, dtype=np.float64) -> Tensor:
    """(out_size, in_size) averaging weights of adaptive average pooling."""
    if in_size <= 0 or out_size <= 0:
        raise ShapeError(f"pooling extents must be positive, got {in_size} -> {out_size}")
    m = np.zeros((out_size, in_size), dtype=dtype)
    for i in range(out_size):
        start = (i * in_size) // out_size
        end = -((-(i + 1) * in_size) // out_size)
        m[i, start:end] = 1.0 / (end - start)
    return m


def adaptive_avg_pool_forward(x: Tensor, size: Sequence[int]) -> Tuple[Tensor, Any]:
    ph = pooling_matrix(x.shape[-2], int(size[0]), x.dtype)
    pw = pooling_matrix(x.shape[-1], int(size[1]), x.dtype)
    return np.matmul(np.matmul(ph, x), pw.T), (ph, pw)


def adaptive_avg_pool_backward(dy: Tensor, cache: Any) -> Tensor:
    ph, pw = cache
    return np.matmul(ph.T, np.matmul(dy, pw))


def global_avg_pool_forward(x: Tensor) -> Tuple[Tensor, Any]:
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects (N, C, H, W), got {x.shape}")
    return x.mean(axis=(2, 3)), x.shape


def global_avg_pool_backward(dy: Tensor, cache: Any) -> Tensor:
    n, c, h, w = cache
    return np.broadcast_to(dy[:, :, None, None] / (h * w), cache).copy()


def linear_forward(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tuple[Tensor, Any]:
    """``x @ weight.T + bias`` for x of shape (N, in) and weight (out, in)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear input {x.shape} does not match weight {weight.shape}")
    y = x @ weight.T
    if bias is not None:
        y = y + bias
    return y, (x, weight, bias is not None)


def linear_backward(dy: Tensor, cache: Any) -> Tuple[Tensor, Tensor, Optional[Tensor]]:
    x, weight, has_bias = cache
    return dy @ weight, dy.T @ x, (dy.sum(axis=0) if has_bias else None)


def dropout_forward(x: Tensor, keep_prob: float, train: bool, rng: np.random.Generator) -> Tuple[Tensor, Any]:
    """Inverted dropout; identity outside train mode."""
    if not train or keep_prob >= 1.0:
        return x, None
    mask = (rng.random(x.shape) < keep_prob).astype(x.dtype) / keep_prob
    return x * mask, mask


def dropout_backward(dy: Tensor, cache: Any) -> Tensor:
    return dy if cache is None else dy * cache


def hadamard_forward(x: Tensor, gates: Tensor) -> Tuple[Tensor, Any]:
    """Scale each channel of (N, C, H, W) by the matching (N, C) gate."""
    if gates.shape != x.shape[:2]:
        raise ShapeError(f"gates {gates.shape} do not match feature channels {x.shape[:2]}")
    return x * gates[:, :, None, None], (x, gates)


def hadamard_backward(dy: Tensor, cache: Any) -> Tuple[Tensor, Tensor]:
    x, gates = cache
    return dy * gates[:, :, None, None], (dy * x).sum(axis=(2, 3))


def attention_forward(q: Tensor, k: Tensor, v: Tensor) -> Tuple[Tensor, Any]:
    """
    Scaled dot-product attention over flattened positions.

    Args:
        q: Queries (N, d_k, Nq)
        k: Keys (N, d_k, Nk)
        v: Values (N, C, Nk)

    Returns:
        ``out`` of shape (N, C, Nq) with ``out[:, :, i] = sum_j A[i, j] v[:, :, j]``
        where ``A = softmax(q^T k / sqrt(d_k))`` is row-stochastic over keys.
    """
    if q.shape[1] != k.shape[1] or k.shape[2] != v.shape[2] or not (q.shape[0] == k.shape[0] == v.shape[0]):
        raise ShapeError(f"attention shapes q={q.shape} k={k.shape} v={v.shape} are inconsistent")
    scale = 1.0 / math.sqrt(q.shape[1])
    scores = np.matmul(q.transpose(0, 2, 1), k) * scale
    attn = softmax(scores, axis=-1)
    out = np.matmul(v, attn.transpose(0, 2, 1))
    return out, (q, k, v, attn, scale)


def attention_backward(dout: Tensor, cache: Any) -> Tuple[Tensor, Tensor, Tensor]:
    """Return ``(dq, dk, dv)``."""
    q, k, v, attn, scale = cache
    dv = np.matmul(dout, attn)
    dattn = np.matmul(dout.transpose(0, 2, 1), v)
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    dq = np.matmul(k, dscores.transpose(0, 2, 1)) * scale
    dk = np.matmul(q, dscores) * scale
    return dq, dk, dv
