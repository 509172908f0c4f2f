"""fume/harness/training.py

Multi-task training: per step, one forward over both modalities, the
masked multi-task loss, one backward and one AdamW update under a cosine
learning rate. Validation runs after every epoch and the checkpoint with
the best validation score is kept.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import msgspec
import numpy as np

from fume.config.settings import RunConfig
from fume.errors import DataError, NumericError
from fume.harness.data import Batch, SplitData, prefetch
from fume.harness.evaluation import evaluate
from fume.harness.optim import AdamW, cosine_lr
from fume.losses.objectives import (
    LossConfig,
    cls_loss,
    cls_loss_grad,
    inverse_frequency_weights,
    seg_loss,
    seg_loss_grad,
    softmax_chain,
    total_loss,
)
from fume.net.checkpoint import save_checkpoint
from fume.net.model import CHANNEL, ForwardOutput, FumeNet, build
from fume.synthgas.dataset import DatasetManifest, load_manifest

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "best.ckpt"
RECORD_NAME = "run.json"


@dataclass
class TrainConfig:
    """Optimisation protocol of one training run."""
    variant: str = "fume"
    seed: int = 0
    dataset: str = "data/synthgas"
    out_dir: str = "runs"
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 20
    weight_decay: float = 1e-2
    betas: Tuple[float, float] = (0.9, 0.999)
    augment: bool = True
    precision: str = "float32"
    prefetch: int = 2
    eval_batch_size: int = 16
    loss: LossConfig = field(default_factory=LossConfig)

    @classmethod
    def from_run_config(cls, cfg: RunConfig) -> "TrainConfig":
        return cls(
            variant=cfg.variant,
            seed=cfg.seed,
            dataset=cfg.dataset,
            out_dir=cfg.out_dir,
            lr=cfg.lr,
            batch_size=cfg.batch_size,
            epochs=cfg.epochs,
            weight_decay=cfg.weight_decay,
            betas=(cfg.beta1, cfg.beta2),
            augment=cfg.augment,
            precision=cfg.precision,
            prefetch=cfg.prefetch,
            eval_batch_size=cfg.eval_batch_size,
            loss=LossConfig.from_run_config(cfg),
        )


class EpochRecord(msgspec.Struct):
    epoch: int
    lr: float
    loss: float
    seg_co2: float
    seg_ch4: float
    cls: float
    val_accuracy_pct: Optional[float]
    val_miou_pct: Optional[float]
    val_dice_pct: Optional[float]
    seconds: float


class RunRecord(msgspec.Struct):
    variant: str
    seed: int
    epochs: List[EpochRecord]
    checkpoint: str
    best_epoch: int
    best_score: float
    seg_weights: List[float]
    cls_weights: List[float]
    wall_clock: float

    def save(self, path: Path) -> Path:
        path.write_bytes(msgspec.json.format(msgspec.json.encode(self), indent=2))
        return path

    @classmethod
    def load(cls, path: Path) -> "RunRecord":
        return msgspec.json.decode(Path(path).read_bytes(), type=cls)


@dataclass
class StepResult:
    loss: float
    seg_co2: float
    seg_ch4: float
    cls: float


def pixel_class_counts(data: SplitData) -> np.ndarray:
    """Pixel counts per mask class over the present modalities of a split."""
    counts = np.zeros(3, dtype=np.int64)
    for pair in data.pairs:
        for present, mask in ((pair.has_co2, pair.co2_mask), (pair.has_ch4, pair.ch4_mask)):
            if present:
                counts += np.bincount(mask.ravel(), minlength=3)[:3]
    return counts


def compute_losses(net: FumeNet, out: ForwardOutput, batch: Batch, loss_cfg: LossConfig) -> Tuple[StepResult, ForwardOutput]:
    """
    Multi-task loss of one batch and its gradient w.r.t. the network outputs.

    Each segmentation head is scored only on the samples whose modality is
    present; a head with no present sample contributes nothing.
    """
    grads = ForwardOutput()
    seg_values = {"co2": 0.0, "ch4": 0.0}
    present_any = {"co2": False, "ch4": False}
    for s in net.decoders:
        present = batch.modality[:, CHANNEL[s]]
        logits = out.seg(s)
        grad = np.zeros_like(logits)
        if present.any():
            value, dlogits = softmax_chain(logits[present], seg_loss, seg_loss_grad,
                                           batch.masks[present, CHANNEL[s]], loss_cfg)
            grad[present] = dlogits
            seg_values[s] = value
            present_any[s] = True
        setattr(grads, f"seg_{s}", grad)

    cls_value = 0.0
    if out.class_logits is not None:
        cls_value, dlogits = softmax_chain(out.class_logits, cls_loss, cls_loss_grad, batch.labels, loss_cfg)
        grads.class_logits = loss_cfg.lambda_cls * dlogits

    total = total_loss(seg_values["co2"], seg_values["ch4"], cls_value, loss_cfg,
                       has_co2=present_any["co2"], has_ch4=present_any["ch4"])
    return StepResult(total, seg_values["co2"], seg_values["ch4"], cls_value), grads


def train_step(net: FumeNet, optimizer: AdamW, batch: Batch, loss_cfg: LossConfig, lr: float) -> StepResult:
    out, cache = net.forward(batch.x, train=True, modality_mask=batch.modality)
    result, grads = compute_losses(net, out, batch, loss_cfg)
    if not math.isfinite(result.loss):
        raise NumericError(
            f"Non-finite loss {result.loss} (seg_co2={result.seg_co2}, seg_ch4={result.seg_ch4}, cls={result.cls})",
            details={"batch_ids": batch.ids},
        )
    optimizer.zero_grad()
    net.backward(grads, cache)
    optimizer.step(lr=lr)
    return result


def _selection_score(net: FumeNet, accuracy: Optional[float], miou: Optional[float]) -> float:
    if net.decoders:
        return float(miou)
    return float(accuracy)


def train_loop(cfg: TrainConfig, manifest: Optional[DatasetManifest] = None) -> RunRecord:
    """
    Train one variant and keep its best checkpoint.

    Args:
        cfg: Training protocol
        manifest: Already loaded dataset; read from ``cfg.dataset`` otherwise

    Returns:
        RunRecord, also written as ``run.json`` next to ``best.ckpt`` in ``cfg.out_dir``

    Raises:
        DataError: If the train split is empty or lacks a class
        NumericError: If a loss turns non-finite
    """
    started = time.perf_counter()
    manifest = manifest if manifest is not None else load_manifest(cfg.dataset)
    train = SplitData(manifest, "train")
    val = SplitData(manifest, "val")
    if len(train) == 0:
        raise DataError(f"{manifest.root}: train split is empty")
    class_counts = manifest.class_counts("train")
    if min(class_counts) == 0:
        raise DataError(f"{manifest.root}: train split lacks a health class (counts {class_counts})")

    loss_cfg = LossConfig(
        focal_gamma=cfg.loss.focal_gamma,
        lambda_cls=cfg.loss.lambda_cls,
        dice_smooth=cfg.loss.dice_smooth,
        seg_weights=inverse_frequency_weights(pixel_class_counts(train)),
        cls_weights=inverse_frequency_weights(class_counts),
    )
    dtype = np.float32 if cfg.precision == "float32" else np.float64
    net = build(cfg.variant, cfg.seed, dtype=dtype)
    optimizer = AdamW(net.store, lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay)

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = out_dir / CHECKPOINT_NAME

    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    logger.info(
        f"Training {net.config.name}: {len(train)} train / {len(val)} val samples, "
        f"{cfg.epochs} epochs x {steps_per_epoch} steps, {net.num_parameters()} parameters"
    )

    epochs: List[EpochRecord] = []
    best_epoch, best_score = 0, -math.inf
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        epoch_start = time.perf_counter()
        batches = train.batches(
            cfg.batch_size, dtype=dtype,
            shuffle_seed=(cfg.seed, epoch),
            augment_seed=(cfg.seed, epoch, 1) if cfg.augment else None,
        )
        sums = np.zeros(4)
        seen = 0
        epoch_lr = cosine_lr(cfg.lr, step, total_steps)
        for batch in prefetch(batches, cfg.prefetch):
            result = train_step(net, optimizer, batch, loss_cfg, cosine_lr(cfg.lr, step, total_steps))
            sums += len(batch) * np.array([result.loss, result.seg_co2, result.seg_ch4, result.cls])
            seen += len(batch)
            step += 1
        means = sums / max(seen, 1)

        if len(val):
            report = evaluate(net, val, batch_size=cfg.eval_batch_size, boundary=False, macs_size=None)
            val_acc, val_miou, val_dice = report.accuracy_pct, report.miou_pct, report.dice_pct
            score = _selection_score(net, val_acc, val_miou)
        else:
            val_acc = val_miou = val_dice = None
            score = float(-means[0])
        if score > best_score:
            best_epoch, best_score = epoch, score
            save_checkpoint(net, checkpoint)

        record = EpochRecord(
            epoch=epoch, lr=epoch_lr, loss=float(means[0]), seg_co2=float(means[1]),
            seg_ch4=float(means[2]), cls=float(means[3]), val_accuracy_pct=val_acc,
            val_miou_pct=val_miou, val_dice_pct=val_dice, seconds=time.perf_counter() - epoch_start,
        )
        epochs.append(record)
        logger.info(
            f"epoch {epoch}/{cfg.epochs} lr={epoch_lr:.6f} loss={record.loss:.4f} "
            f"(co2 {record.seg_co2:.4f}, ch4 {record.seg_ch4:.4f}, cls {record.cls:.4f}) "
            f"val acc_pct={val_acc if val_acc is None else round(val_acc, 2)} "
            f"miou_pct={val_miou if val_miou is None else round(val_miou, 2)}"
        )

    run = RunRecord(
        variant=net.config.name,
        seed=cfg.seed,
        epochs=epochs,
        checkpoint=str(checkpoint),
        best_epoch=best_epoch,
        best_score=best_score,
        seg_weights=list(loss_cfg.seg_weights),
        cls_weights=list(loss_cfg.cls_weights),
        wall_clock=time.perf_counter() - started,
    )
    run.save(out_dir / RECORD_NAME)
    logger.info(f"Best epoch {best_epoch} (score {best_score:.4f}); checkpoint {checkpoint}")
    return run
