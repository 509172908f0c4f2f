"""fume/metrics/report.py

MetricsReport and its two serialisations: a flat ``key=value`` text block
and a CSV row under ``REPORT_FIELDS``. Field order never changes; missing
values (e.g. accuracy of a segmentation-only model) are written empty.

Every field name carries its unit: ``_pct`` for classification and overlap
scores in percent, ``_px`` for boundary distances in pixels, then ``_m``,
``_g`` and ``_ms`` for millions of parameters, GMACs and milliseconds.
"""

import csv
import io
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, Optional, Union

Number = Optional[float]


@dataclass
class MetricsReport:
    """Classification, segmentation, boundary and efficiency results of one run."""
    variant: str = ""
    split: str = ""
    samples: int = 0
    accuracy_pct: Number = None
    f1_healthy_pct: Number = None
    f1_transitional_pct: Number = None
    f1_acidotic_pct: Number = None
    macro_f1_pct: Number = None
    balanced_accuracy_pct: Number = None
    iou_co2_background_pct: Number = None
    iou_co2_tube_pct: Number = None
    iou_co2_gas_pct: Number = None
    iou_ch4_background_pct: Number = None
    iou_ch4_tube_pct: Number = None
    iou_ch4_gas_pct: Number = None
    miou_pct: Number = None
    dice_pct: Number = None
    hd95_gas_px: Number = None
    asd_gas_px: Number = None
    hd95_mean_px: Number = None
    asd_mean_px: Number = None
    boundary_excluded: int = 0
    params_m: Number = None
    macs_g: Number = None
    latency_ms: Number = None
    fps: Number = None

    def to_dict(self) -> Dict[str, Union[str, int, float, None]]:
        return asdict(self)

    def to_text(self) -> str:
        return "".join(f"{key}={_format(value)}\n" for key, value in self.to_dict().items())

    def to_csv_row(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerow(_format(v) for v in self.to_dict().values())
        return buf.getvalue()

    def write(self, out_dir: Union[str, Path], stem: str = "report") -> Path:
        """Write ``<stem>.txt`` and ``<stem>.csv`` (header + row) into ``out_dir``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{stem}.txt").write_text(self.to_text(), encoding="utf-8")
        (out_dir / f"{stem}.csv").write_text(csv_header() + self.to_csv_row(), encoding="utf-8")
        return out_dir / f"{stem}.txt"


REPORT_FIELDS = tuple(f.name for f in fields(MetricsReport))


def csv_header() -> str:
    return ",".join(REPORT_FIELDS) + "\n"


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)
