"""fume/losses/objectives.py

Training objectives and their gradients with respect to probabilities.

Segmentation uses an even blend of class-weighted focal loss and soft Dice
loss per modality head; classification uses class-weighted focal loss; the
multi-task objective is ``seg_co2 + seg_ch4 + lambda * cls``.

Probabilities carry classes on axis 1: ``(N, K)`` for classification and
``(N, K, H, W)`` for segmentation. Targets are integer class ids of shape
``(N,)`` or ``(N, H, W)``.

Each loss has a ``*_grad`` twin returning d(loss)/d(probs);
``softmax_chain`` carries that back to logits.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from fume.errors import ConfigError, ShapeError
from fume.kernels.functional import softmax, softmax_backward

logger = logging.getLogger(__name__)

Tensor = np.ndarray

LOG_CLAMP = 1e-12
NUM_CLASSES = 3


@dataclass
class LossConfig:
    """Loss hyperparameters; class weights default to uniform."""
    focal_gamma: float = 2.0
    lambda_cls: float = 0.5
    dice_smooth: float = 1.0
    seg_weights: Tuple[float, ...] = field(default=(1.0, 1.0, 1.0))
    cls_weights: Tuple[float, ...] = field(default=(1.0, 1.0, 1.0))

    def __post_init__(self):
        self.validate()

    def validate(self) -> "LossConfig":
        if self.focal_gamma < 0:
            raise ConfigError(f"focal_gamma must be non-negative, got {self.focal_gamma}")
        if self.lambda_cls < 0:
            raise ConfigError(f"lambda_cls must be non-negative, got {self.lambda_cls}")
        if self.dice_smooth <= 0:
            raise ConfigError(f"dice_smooth must be positive, got {self.dice_smooth}")
        for name in ("seg_weights", "cls_weights"):
            weights = getattr(self, name)
            if len(weights) != NUM_CLASSES or min(weights) < 0:
                raise ConfigError(f"{name} must be {NUM_CLASSES} non-negative values, got {weights}")
        return self

    @classmethod
    def from_run_config(cls, cfg, seg_weights=None, cls_weights=None) -> "LossConfig":
        return cls(
            focal_gamma=cfg.focal_gamma,
            lambda_cls=cfg.lambda_cls,
            dice_smooth=cfg.dice_smooth,
            seg_weights=tuple(seg_weights) if seg_weights is not None else (1.0, 1.0, 1.0),
            cls_weights=tuple(cls_weights) if cls_weights is not None else (1.0, 1.0, 1.0),
        )


def inverse_frequency_weights(counts: Sequence[float]) -> Tuple[float, ...]:
    """Weights proportional to 1/count, normalised to mean 1; empty classes count as 1."""
    counts = np.maximum(np.asarray(counts, dtype=np.float64), 1.0)
    inv = 1.0 / counts
    return tuple(float(w) for w in inv * len(inv) / inv.sum())


def _true_class_probs(probs: Tensor, targets: Tensor) -> Tensor:
    if probs.shape[:1] + probs.shape[2:] != targets.shape:
        raise ShapeError(f"probs {probs.shape} do not match targets {targets.shape}")
    return np.take_along_axis(probs, targets[:, None].astype(np.intp), axis=1)[:, 0]


def _class_weights(targets: Tensor, weights: Optional[Sequence[float]], dtype) -> Tensor:
    if weights is None:
        return np.ones(targets.shape, dtype=dtype)
    return np.asarray(weights, dtype=dtype)[targets]


def focal_loss(probs: Tensor, targets: Tensor, weights: Optional[Sequence[float]] = None,
               gamma: float = 2.0) -> float:
    """
    Mean over elements of ``-alpha_c (1 - p_c)^gamma log p_c`` for the true class c.

    ``p_c`` is clamped at 1e-12 inside the log. With ``gamma = 0`` and unit
    weights this is cross-entropy.
    """
    p = _true_class_probs(probs, targets)
    alpha = _class_weights(targets, weights, probs.dtype)
    modulator = (1.0 - p) ** gamma if gamma else 1.0
    return float(np.mean(-alpha * modulator * np.log(np.maximum(p, LOG_CLAMP))))


def focal_loss_grad(probs: Tensor, targets: Tensor, weights: Optional[Sequence[float]] = None,
                    gamma: float = 2.0) -> Tensor:
    p = _true_class_probs(probs, targets)
    alpha = _class_weights(targets, weights, probs.dtype)
    clamped = p < LOG_CLAMP
    log_p = np.log(np.maximum(p, LOG_CLAMP))
    one_minus = 1.0 - p
    if gamma:
        with np.errstate(divide="ignore", invalid="ignore"):
            dmod = np.where(one_minus > 0, gamma * one_minus ** (gamma - 1.0), 0.0)
        modulator = one_minus ** gamma
    else:
        dmod = np.zeros_like(p)
        modulator = np.ones_like(p)
    dlog = np.where(clamped, 0.0, 1.0 / np.maximum(p, LOG_CLAMP))
    dp = -alpha * (-dmod * log_p + modulator * dlog) / p.size
    grad = np.zeros_like(probs)
    np.put_along_axis(grad, targets[:, None].astype(np.intp), dp[:, None], axis=1)
    return grad


def one_hot(targets: Tensor, num_classes: int = NUM_CLASSES, dtype=np.float64) -> Tensor:
    """Class ids (N, ...) -> one-hot (N, K, ...)."""
    eye = np.eye(num_classes, dtype=dtype)[targets.astype(np.intp)]
    return np.moveaxis(eye, -1, 1)


def _dice_sums(probs: Tensor, one_hot_targets: Tensor):
    if probs.shape != one_hot_targets.shape:
        raise ShapeError(f"probs {probs.shape} and targets {one_hot_targets.shape} differ")
    axes = (0,) + tuple(range(2, probs.ndim))
    return (probs * one_hot_targets).sum(axis=axes), probs.sum(axis=axes), one_hot_targets.sum(axis=axes)


def dice_loss(probs: Tensor, one_hot_targets: Tensor, smooth: float = 1.0) -> float:
    """``1 - mean_c (2 sum(p t) + eps) / (sum(p) + sum(t) + eps)``, sums over batch and pixels."""
    inter, sum_p, sum_t = _dice_sums(probs, one_hot_targets)
    return float(1.0 - np.mean((2.0 * inter + smooth) / (sum_p + sum_t + smooth)))


def dice_loss_grad(probs: Tensor, one_hot_targets: Tensor, smooth: float = 1.0) -> Tensor:
    inter, sum_p, sum_t = _dice_sums(probs, one_hot_targets)
    num = 2.0 * inter + smooth
    den = sum_p + sum_t + smooth
    shape = (1, -1) + (1,) * (probs.ndim - 2)
    grad = (2.0 * one_hot_targets * den.reshape(shape) - num.reshape(shape)) / (den ** 2).reshape(shape)
    return -grad / probs.shape[1]


def seg_loss(probs: Tensor, targets: Tensor, cfg: LossConfig) -> float:
    """``0.5 * focal + 0.5 * dice`` for one segmentation head."""
    focal = focal_loss(probs, targets, cfg.seg_weights, cfg.focal_gamma)
    dice = dice_loss(probs, one_hot(targets, probs.shape[1], probs.dtype), cfg.dice_smooth)
    return 0.5 * focal + 0.5 * dice


def seg_loss_grad(probs: Tensor, targets: Tensor, cfg: LossConfig) -> Tensor:
    return 0.5 * focal_loss_grad(probs, targets, cfg.seg_weights, cfg.focal_gamma) + 0.5 * dice_loss_grad(
        probs, one_hot(targets, probs.shape[1], probs.dtype), cfg.dice_smooth
    )


def cls_loss(probs: Tensor, targets: Tensor, cfg: LossConfig) -> float:
    return focal_loss(probs, targets, cfg.cls_weights, cfg.focal_gamma)


def cls_loss_grad(probs: Tensor, targets: Tensor, cfg: LossConfig) -> Tensor:
    return focal_loss_grad(probs, targets, cfg.cls_weights, cfg.focal_gamma)


def total_loss(seg_co2: float, seg_ch4: float, cls: float, cfg: LossConfig,
               has_co2: bool = True, has_ch4: bool = True) -> float:
    """Multi-task objective; an absent modality contributes nothing."""
    return (seg_co2 if has_co2 else 0.0) + (seg_ch4 if has_ch4 else 0.0) + cfg.lambda_cls * cls


def softmax_chain(logits: Tensor, loss_fn, grad_fn, *args) -> Tuple[float, Tensor]:
    """
    Evaluate a probability-space loss on ``softmax(logits)`` along axis 1.

    Returns:
        (loss, d(loss)/d(logits))
    """
    probs = softmax(logits, axis=1)
    value = loss_fn(probs, *args)
    dlogits = softmax_backward(grad_fn(probs, *args), (probs, 1))
    return value, dlogits
