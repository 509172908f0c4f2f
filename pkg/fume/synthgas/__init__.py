"""fume/synthgas/__init__.py"""

from .generator import (
    PH_LEVELS,
    GasFramePair,
    HealthLabel,
    map_ph_to_class,
    synth_pair,
    tube_region,
)
from .dataset import (
    MANIFEST_HEADER,
    SPLITS,
    DatasetManifest,
    ManifestRow,
    assign_splits,
    build_dataset,
    load_manifest,
    load_pair,
    load_split,
    read_pgm,
    split_counts,
    write_pgm,
)
from .augment import AugmentParams, apply_augmentation, augment

__all__ = [
    "PH_LEVELS",
    "GasFramePair",
    "HealthLabel",
    "map_ph_to_class",
    "synth_pair",
    "tube_region",
    "MANIFEST_HEADER",
    "SPLITS",
    "DatasetManifest",
    "ManifestRow",
    "assign_splits",
    "build_dataset",
    "load_manifest",
    "load_pair",
    "load_split",
    "read_pgm",
    "split_counts",
    "write_pgm",
    "AugmentParams",
    "apply_augmentation",
    "augment",
]
