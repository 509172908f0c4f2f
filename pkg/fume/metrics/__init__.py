"""fume/metrics/__init__.py"""

from .classification import ClassificationMetrics, ConfusionMatrix, classification_metrics
from .segmentation import (
    BoundaryAccumulator,
    SegmentationAccumulator,
    asd,
    boundary,
    dice_coeff,
    hd95,
    iou,
    nearest_rank_95,
    surface_distances,
)
from .efficiency import BenchResult, EfficiencyRow, bench_latency, count_macs, count_params, efficiency_table
from .report import REPORT_FIELDS, MetricsReport, csv_header

__all__ = [
    "ClassificationMetrics",
    "ConfusionMatrix",
    "classification_metrics",
    "BoundaryAccumulator",
    "SegmentationAccumulator",
    "asd",
    "boundary",
    "dice_coeff",
    "hd95",
    "iou",
    "nearest_rank_95",
    "surface_distances",
    "BenchResult",
    "EfficiencyRow",
    "bench_latency",
    "count_macs",
    "count_params",
    "efficiency_table",
    "REPORT_FIELDS",
    "MetricsReport",
    "csv_header",
]
