"""fume/synthgas/dataset.py

On-disk synthetic dataset: PGM frames and masks plus a CSV manifest.

Layout under the dataset root::

    manifest.csv
    frames/<id>_co2.pgm   frames/<id>_ch4.pgm
    masks/<id>_co2.pgm    masks/<id>_ch4.pgm

Manifest paths are relative to the root. An absent modality still has its
files, written as all-zero images, and its ``has_*`` flag set to 0.
"""

import csv
import io
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import msgspec
import numpy as np
from PIL import Image, UnidentifiedImageError

from fume.errors import DataError
from fume.synthgas.generator import GasFramePair, HealthLabel, map_ph_to_class, synth_pair

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.csv"
MANIFEST_HEADER = (
    "id", "split", "ph", "label", "co2_frame", "ch4_frame", "co2_mask", "ch4_mask", "has_co2", "has_ch4",
)
SPLITS = ("train", "val", "test")
SPLIT_FRACTIONS = (0.70, 0.15, 0.15)
MIN_SAMPLES_PER_PH = 10
SESSION_LENGTH = 20


class ManifestRow(msgspec.Struct, frozen=True):
    id: str
    split: str
    ph: float
    label: str
    co2_frame: str
    ch4_frame: str
    co2_mask: str
    ch4_mask: str
    has_co2: bool
    has_ch4: bool

    @property
    def health(self) -> HealthLabel:
        return HealthLabel.from_display(self.label)

    def to_csv(self) -> List[str]:
        return [
            self.id, self.split, f"{self.ph:.2f}", self.label,
            self.co2_frame, self.ch4_frame, self.co2_mask, self.ch4_mask,
            str(int(self.has_co2)), str(int(self.has_ch4)),
        ]


@dataclass
class DatasetManifest:
    """Every sample of a generated dataset with its split assignment."""
    root: Path
    rows: List[ManifestRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def split(self, name: str) -> List[ManifestRow]:
        if name not in SPLITS:
            raise DataError(f"Unknown split {name!r}; expected one of {', '.join(SPLITS)}")
        return [row for row in self.rows if row.split == name]

    def split_sizes(self) -> Dict[str, int]:
        counts = Counter(row.split for row in self.rows)
        return {name: counts.get(name, 0) for name in SPLITS}

    def split_sizes_by_ph(self) -> Dict[float, Tuple[int, int, int]]:
        counts = Counter((row.ph, row.split) for row in self.rows)
        levels = sorted({row.ph for row in self.rows}, reverse=True)
        return {ph: tuple(counts.get((ph, name), 0) for name in SPLITS) for ph in levels}

    def class_counts(self, split: str = "train") -> Tuple[int, ...]:
        counts = Counter(int(row.health) for row in self.split(split))
        return tuple(counts.get(int(label), 0) for label in HealthLabel)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for row in self.rows:
            writer.writerow(row.to_csv())
        return buf.getvalue()

    def write(self) -> Path:
        path = self.root / MANIFEST_NAME
        try:
            path.write_text(self.to_csv(), encoding="utf-8")
        except OSError as e:
            raise DataError(f"Cannot write manifest {path}: {e}")
        return path


def split_counts(n: int, fractions: Sequence[float] = SPLIT_FRACTIONS) -> Tuple[int, ...]:
    """
    Largest-remainder apportionment of ``n`` samples over the splits.

    Floors are assigned first; leftover samples go to the largest fractional
    parts, ties broken in split order (train, then val, then test).
    For example 1008 -> (706, 151, 151) and 10 -> (7, 2, 1).
    """
    quotas = [n * f for f in fractions]
    counts = [int(np.floor(q)) for q in quotas]
    leftover = n - sum(counts)
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return tuple(counts)


def sample_seed(seed: int, ph: float, index: int) -> int:
    """Per-sample seed derived from the dataset seed, pH level and sample index."""
    return int(np.random.SeedSequence([seed, int(round(ph * 100)), index]).generate_state(1)[0])


def assign_splits(n: int, seed: int, ph: float, session_length: int = SESSION_LENGTH) -> List[str]:
    """
    Split labels for samples ``0..n-1`` of one pH level.

    Samples are grouped into sessions of ``session_length`` consecutive
    indices. Sessions are shuffled with a seeded generator and laid end to
    end; the first ``train`` samples go to train, then val, then test. Only
    the sessions straddling a split boundary are divided.
    """
    sessions = [list(range(start, min(start + session_length, n))) for start in range(0, n, session_length)]
    rng = np.random.default_rng([seed, int(round(ph * 100)), session_length])
    ordered = [i for s in rng.permutation(len(sessions)) for i in sessions[s]]
    labels = [""] * n
    position = 0
    for name, count in zip(SPLITS, split_counts(n)):
        for i in ordered[position:position + count]:
            labels[i] = name
        position += count
    return labels


def write_pgm(path: Path, array: np.ndarray) -> None:
    """Write a 2-D uint8 array as binary PGM (P5)."""
    if array.ndim != 2 or array.dtype != np.uint8:
        raise DataError(f"PGM output needs a 2-D uint8 array, got {array.dtype} {array.shape}")
    try:
        Image.fromarray(array).save(path, format="PPM")
    except OSError as e:
        raise DataError(f"Cannot write image {path}: {e}")


def read_pgm(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            if img.mode != "L":
                raise DataError(f"{path} is not an 8-bit grayscale image (mode {img.mode})")
            return np.array(img, dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as e:
        raise DataError(f"Cannot read image {path}: {e}")


def _relative_paths(sample_id: str) -> Dict[str, str]:
    return {
        "co2_frame": f"frames/{sample_id}_co2.pgm",
        "ch4_frame": f"frames/{sample_id}_ch4.pgm",
        "co2_mask": f"masks/{sample_id}_co2.pgm",
        "ch4_mask": f"masks/{sample_id}_ch4.pgm",
    }


def save_pair(root: Path, sample_id: str, split: str, pair: GasFramePair) -> ManifestRow:
    paths = _relative_paths(sample_id)
    write_pgm(root / paths["co2_frame"], pair.co2_frame)
    write_pgm(root / paths["ch4_frame"], pair.ch4_frame)
    write_pgm(root / paths["co2_mask"], pair.co2_mask)
    write_pgm(root / paths["ch4_mask"], pair.ch4_mask)
    return ManifestRow(
        id=sample_id, split=split, ph=pair.ph, label=pair.label.display,
        has_co2=pair.has_co2, has_ch4=pair.has_ch4, **paths,
    )


def build_dataset(counts_per_ph: Mapping[float, int], seed: int, out_dir: Union[str, Path],
                  size: int = 64, session_length: int = SESSION_LENGTH, workers: int = 1) -> DatasetManifest:
    """
    Generate a dataset on disk.

    Args:
        counts_per_ph: Samples to draw at each pH level (at least 10 each)
        seed: Dataset seed
        out_dir: Dataset root; created if needed
        size: Frame side length
        session_length: Samples per session block for split assignment
        workers: Threads rendering samples; output is independent of this

    Returns:
        The written DatasetManifest

    Raises:
        DataError: On too few samples per level or an unwritable directory
    """
    root = Path(out_dir)
    for ph, count in counts_per_ph.items():
        map_ph_to_class(ph)
        if count < MIN_SAMPLES_PER_PH:
            raise DataError(f"pH {ph}: need at least {MIN_SAMPLES_PER_PH} samples, got {count}")
    try:
        (root / "frames").mkdir(parents=True, exist_ok=True)
        (root / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"Cannot create dataset directory {root}: {e}")

    jobs = []
    for ph, count in counts_per_ph.items():
        splits = assign_splits(count, seed, ph, session_length)
        for index in range(count):
            jobs.append((f"ph{int(round(ph * 100)):03d}_{index:05d}", splits[index], ph, sample_seed(seed, ph, index)))

    def render(job) -> ManifestRow:
        sample_id, split, ph, sample_seed_ = job
        return save_pair(root, sample_id, split, synth_pair(ph, sample_seed_, size))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(render, jobs))
    else:
        rows = [render(job) for job in jobs]

    manifest = DatasetManifest(root=root, rows=rows)
    manifest.write()
    for ph, sizes in manifest.split_sizes_by_ph().items():
        logger.info(f"pH {ph:.1f}: train/val/test = {sizes[0]}/{sizes[1]}/{sizes[2]}")
    logger.info(f"Wrote {len(rows)} samples to {root}")
    return manifest


def _parse_flag(value: str, key: str, lineno: int) -> bool:
    if value not in ("0", "1"):
        raise DataError(f"manifest line {lineno}: {key} must be 0 or 1, got {value!r}")
    return value == "1"


def load_manifest(root: Union[str, Path]) -> DatasetManifest:
    """Read ``manifest.csv`` from a dataset root."""
    root = Path(root)
    path = root / MANIFEST_NAME
    if not path.is_file():
        raise DataError(f"No dataset manifest at {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != MANIFEST_HEADER:
            raise DataError(f"{path}: unexpected header {','.join(header)}")
        rows = []
        for lineno, values in enumerate(reader, start=2):
            if len(values) != len(MANIFEST_HEADER):
                raise DataError(f"{path}:{lineno}: expected {len(MANIFEST_HEADER)} columns, got {len(values)}")
            record = dict(zip(MANIFEST_HEADER, values))
            record["has_co2"] = _parse_flag(record["has_co2"], "has_co2", lineno)
            record["has_ch4"] = _parse_flag(record["has_ch4"], "has_ch4", lineno)
            try:
                row = msgspec.convert(record, ManifestRow, strict=False)
            except msgspec.ValidationError as e:
                raise DataError(f"{path}:{lineno}: {e}")
            if row.split not in SPLITS:
                raise DataError(f"{path}:{lineno}: unknown split {row.split!r}")
            rows.append(row)
    return DatasetManifest(root=root, rows=rows)


def load_pair(root: Union[str, Path], row: ManifestRow) -> GasFramePair:
    root = Path(root)
    return GasFramePair(
        co2_frame=read_pgm(root / row.co2_frame),
        ch4_frame=read_pgm(root / row.ch4_frame),
        co2_mask=read_pgm(root / row.co2_mask),
        ch4_mask=read_pgm(root / row.ch4_mask),
        modality_mask=(row.has_co2, row.has_ch4),
        ph=row.ph,
        label=row.health,
    )


def load_split(manifest: DatasetManifest, split: str, ids: Optional[Iterable[str]] = None) -> List[GasFramePair]:
    rows = manifest.split(split)
    if ids is not None:
        wanted = set(ids)
        rows = [row for row in rows if row.id in wanted]
    return [load_pair(manifest.root, row) for row in rows]
