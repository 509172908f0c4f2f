"""fume/harness/evaluation.py

Evaluate a network on one dataset split and fill a MetricsReport.
"""

import logging
from typing import Dict, Optional

import numpy as np

from fume.harness.data import SplitData
from fume.metrics.classification import ConfusionMatrix, classification_metrics
from fume.metrics.efficiency import BenchResult, count_macs, count_params
from fume.metrics.report import MetricsReport
from fume.metrics.segmentation import NUM_CLASSES, BoundaryAccumulator, SegmentationAccumulator
from fume.net.model import CHANNEL, FumeNet
from fume.synthgas.dataset import DatasetManifest
from fume.synthgas.generator import GAS

logger = logging.getLogger(__name__)

CLASS_NAMES = ("background", "tube", "gas")


def evaluate(net: FumeNet, data, split: str = "test", batch_size: int = 16, boundary: bool = True,
             macs_size: Optional[int] = 512, bench: Optional[BenchResult] = None) -> MetricsReport:
    """
    Eval-mode metrics of ``net`` on a split.

    Args:
        net: Network to evaluate
        data: A DatasetManifest or an already loaded SplitData
        split: Split name when ``data`` is a manifest
        batch_size: Samples per forward
        boundary: Also compute HD95 / ASD (the slow part)
        macs_size: Input side for the MAC count; None leaves it empty
        bench: Latency result to copy into the report

    Returns:
        MetricsReport; segmentation fields are empty for heads the variant
        lacks, classification fields for variants without a head
    """
    if isinstance(data, DatasetManifest):
        data = SplitData(data, split)
    report = MetricsReport(variant=net.config.name, split=data.split, samples=len(data))

    cm = ConfusionMatrix()
    seg: Dict[str, SegmentationAccumulator] = {s: SegmentationAccumulator() for s in net.decoders}
    per_class = [BoundaryAccumulator() for _ in range(NUM_CLASSES)]

    for batch in data.batches(batch_size, dtype=net.dtype):
        out = net.predict(batch.x, batch.modality)
        if out.class_logits is not None:
            cm.update(batch.labels, np.argmax(out.class_logits, axis=1))
        for s in net.decoders:
            pred = np.argmax(out.seg(s), axis=1)
            present = batch.modality[:, CHANNEL[s]]
            for i in np.flatnonzero(present):
                truth = batch.masks[i, CHANNEL[s]]
                seg[s].update(pred[i], truth)
                if boundary:
                    for c, acc in enumerate(per_class):
                        acc.update(pred[i], truth, c)

    if net.head is not None:
        cls = classification_metrics(cm)
        report.accuracy_pct = cls.accuracy
        report.f1_healthy_pct, report.f1_transitional_pct, report.f1_acidotic_pct = cls.f1_per_class
        report.macro_f1_pct = cls.macro_f1
        report.balanced_accuracy_pct = cls.balanced_accuracy

    if seg:
        for s, acc in seg.items():
            for name, value in zip(CLASS_NAMES, acc.iou_per_class()):
                setattr(report, f"iou_{s}_{name}_pct", 100.0 * value)
        report.miou_pct = 100.0 * float(np.mean([acc.mean_iou() for acc in seg.values()]))
        report.dice_pct = 100.0 * float(np.mean([acc.mean_dice() for acc in seg.values()]))
        if boundary:
            report.hd95_gas_px = per_class[GAS].hd95
            report.asd_gas_px = per_class[GAS].asd
            hd = [acc.hd95 for acc in per_class if acc.hd95 is not None]
            sd = [acc.asd for acc in per_class if acc.asd is not None]
            report.hd95_mean_px = float(np.mean(hd)) if hd else None
            report.asd_mean_px = float(np.mean(sd)) if sd else None
            report.boundary_excluded = sum(acc.excluded for acc in per_class)

    report.params_m = count_params(net) / 1e6
    if macs_size:
        report.macs_g = count_macs(net, (1, 2, macs_size, macs_size)) / 1e9
    if bench is not None:
        report.latency_ms = bench.latency_ms
        report.fps = bench.fps

    logger.info(
        f"{report.variant} on {report.split} ({report.samples} samples): "
        f"acc_pct={_fmt(report.accuracy_pct)} miou_pct={_fmt(report.miou_pct)} dice_pct={_fmt(report.dice_pct)}"
    )
    return report


def _fmt(value) -> str:
    return "-" if value is None else f"{value:.4f}"
