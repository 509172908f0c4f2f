"""fume/losses/__init__.py"""

from .objectives import (
    LossConfig,
    cls_loss,
    cls_loss_grad,
    dice_loss,
    dice_loss_grad,
    focal_loss,
    focal_loss_grad,
    inverse_frequency_weights,
    one_hot,
    seg_loss,
    seg_loss_grad,
    softmax_chain,
    total_loss,
)

__all__ = [
    "LossConfig",
    "cls_loss",
    "cls_loss_grad",
    "dice_loss",
    "dice_loss_grad",
    "focal_loss",
    "focal_loss_grad",
    "inverse_frequency_weights",
    "one_hot",
    "seg_loss",
    "seg_loss_grad",
    "softmax_chain",
    "total_loss",
]
