"""fume/harness/ablation.py

Train and evaluate every variant on one dataset with one seed, and write
the comparison table.
"""

import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from fume.config.settings import RunConfig
from fume.harness.evaluation import evaluate
from fume.harness.training import TrainConfig, train_loop
from fume.metrics.efficiency import bench_latency
from fume.metrics.report import MetricsReport
from fume.net.checkpoint import load_checkpoint
from fume.net.variants import ABLATION_ORDER, Variant
from fume.synthgas.dataset import load_manifest

logger = logging.getLogger(__name__)

ABLATION_HEADER = ("variant", "acc", "miou", "dice", "latency_ms", "delta_miou")


@dataclass
class AblationRow:
    variant: str
    acc: Optional[float]
    miou: Optional[float]
    dice: Optional[float]
    latency_ms: Optional[float]
    delta_miou: Optional[float] = None

    @classmethod
    def from_report(cls, report: MetricsReport) -> "AblationRow":
        return cls(report.variant, report.accuracy_pct, report.miou_pct, report.dice_pct, report.latency_ms)


def ablation_table(rows: Sequence[AblationRow]) -> str:
    """
    CSV text in ablation row order. ``acc``, ``miou`` and ``dice`` are in
    percent; ``delta_miou`` is each row's mIoU minus the fume row's mIoU in
    percentage points, empty where either is missing.
    """
    by_name: Dict[str, AblationRow] = {row.variant: row for row in rows}
    reference = by_name.get(Variant.FUME.value)
    ordered = [by_name[v.value] for v in ABLATION_ORDER if v.value in by_name]

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ABLATION_HEADER)
    for row in ordered:
        if reference is not None and reference.miou is not None and row.miou is not None:
            row.delta_miou = row.miou - reference.miou
        writer.writerow([row.variant] + [_cell(v) for v in (row.acc, row.miou, row.dice, row.latency_ms, row.delta_miou)])
    return buf.getvalue()


def _cell(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6f}"


def ablation_sweep(base_cfg: RunConfig, variants: Optional[Sequence[str]] = None,
                   split: str = "test", bench_iterations: Optional[int] = None) -> Path:
    """
    Run the sweep and write ``ablation.csv`` under ``base_cfg.out_dir``.

    Each variant trains into its own sub-directory with the shared seed and
    dataset. Latency is measured with ``bench_iterations`` timed forwards
    at the training resolution (0 skips it).

    Returns:
        Path of the written CSV
    """
    manifest = load_manifest(base_cfg.dataset)
    names = list(variants) if variants is not None else [v.value for v in ABLATION_ORDER]
    out_root = Path(base_cfg.out_dir)
    iterations = base_cfg.bench_iterations if bench_iterations is None else bench_iterations

    rows: List[AblationRow] = []
    for name in names:
        cfg = base_cfg.replace(variant=name, out_dir=str(out_root / name))
        logger.info(f"Ablation: training {name}")
        run = train_loop(TrainConfig.from_run_config(cfg), manifest)
        net = load_checkpoint(run.checkpoint)
        bench = None
        if iterations:
            size = cfg.image_size
            bench = bench_latency(net, (1, 2, size, size), warmup=min(cfg.bench_warmup, iterations),
                                  iterations=iterations, seed=cfg.seed)
        report = evaluate(net, manifest, split, batch_size=cfg.eval_batch_size, bench=bench,
                          macs_size=cfg.macs_size)
        report.write(cfg.out_dir)
        rows.append(AblationRow.from_report(report))

    path = out_root / "ablation.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(ablation_table(rows), encoding="utf-8")
    logger.info(f"Wrote ablation table to {path}")
    return path
