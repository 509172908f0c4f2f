"""fume/harness/__init__.py"""

from .optim import AdamW, cosine_lr
from .data import Batch, SplitData, make_batch, prefetch
from .evaluation import evaluate
from .training import EpochRecord, RunRecord, TrainConfig, compute_losses, train_loop, train_step
from .ablation import ABLATION_HEADER, AblationRow, ablation_sweep, ablation_table

__all__ = [
    "AdamW",
    "cosine_lr",
    "Batch",
    "SplitData",
    "make_batch",
    "prefetch",
    "evaluate",
    "EpochRecord",
    "RunRecord",
    "TrainConfig",
    "compute_losses",
    "train_loop",
    "train_step",
    "ABLATION_HEADER",
    "AblationRow",
    "ablation_sweep",
    "ablation_table",
]
