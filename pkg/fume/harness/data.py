"""fume/harness/data.py

Batches of dataset samples in the network's layout, and a bounded-queue
prefetcher that assembles batches on a worker thread while the caller
trains on the previous one.
"""

import logging
import queue
import threading
from dataclasses import dataclass
from typing import Iterable, Iterator, List, Optional, Sequence

import numpy as np

from fume.synthgas.augment import augment
from fume.synthgas.dataset import DatasetManifest, ManifestRow, load_pair
from fume.synthgas.generator import GasFramePair

logger = logging.getLogger(__name__)


@dataclass
class Batch:
    """
    ids: sample ids in batch order
    x: (N, 2, H, W) frames scaled to [0, 1], channel 0 = CO2
    masks: (N, 2, H, W) int64 class ids
    labels: (N,) int64 health classes
    modality: (N, 2) presence flags
    """
    ids: List[str]
    x: np.ndarray
    masks: np.ndarray
    labels: np.ndarray
    modality: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def make_batch(ids: Sequence[str], pairs: Sequence[GasFramePair], dtype=np.float32) -> Batch:
    return Batch(
        ids=list(ids),
        x=np.stack([p.frames() for p in pairs]).astype(dtype) / 255.0,
        masks=np.stack([p.masks() for p in pairs]).astype(np.int64),
        labels=np.array([int(p.label) for p in pairs], dtype=np.int64),
        modality=np.array([p.modality_mask for p in pairs], dtype=bool),
    )


class SplitData:
    """All samples of one split, loaded once and kept in memory."""

    def __init__(self, manifest: DatasetManifest, split: str):
        self.split = split
        self.rows: List[ManifestRow] = manifest.split(split)
        self.pairs: List[GasFramePair] = [load_pair(manifest.root, row) for row in self.rows]
        logger.debug(f"Loaded {len(self.pairs)} {split} samples from {manifest.root}")

    def __len__(self) -> int:
        return len(self.pairs)

    def batches(self, batch_size: int, dtype=np.float32, shuffle_seed: Optional[Sequence[int]] = None,
                augment_seed: Optional[Sequence[int]] = None) -> Iterator[Batch]:
        """
        Yield batches in manifest order, or in a seeded permutation.

        With ``augment_seed`` every sample gets a fresh augmentation draw
        from one generator consumed in batch order.
        """
        order = np.arange(len(self.pairs))
        if shuffle_seed is not None:
            order = np.random.default_rng(list(shuffle_seed)).permutation(len(self.pairs))
        aug_rng = np.random.default_rng(list(augment_seed)) if augment_seed is not None else None
        for start in range(0, len(order), batch_size):
            index = order[start:start + batch_size]
            pairs = [self.pairs[i] for i in index]
            if aug_rng is not None:
                pairs = [augment(p, rng=aug_rng) for p in pairs]
            yield make_batch([self.rows[i].id for i in index], pairs, dtype)


_DONE = object()


def prefetch(batches: Iterable[Batch], depth: int = 2) -> Iterator[Batch]:
    """
    Produce ``batches`` on a background thread through a queue of ``depth``.

    ``depth == 0`` iterates inline. Errors raised by the producer are
    re-raised in the consumer.
    """
    if depth <= 0:
        yield from batches
        return

    buffer: "queue.Queue" = queue.Queue(maxsize=depth)
    stop = threading.Event()

    def produce():
        try:
            for batch in batches:
                while not stop.is_set():
                    try:
                        buffer.put(batch, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop.is_set():
                    return
            buffer.put(_DONE)
        except BaseException as e:  # handed to the consumer
            buffer.put(e)

    worker = threading.Thread(target=produce, name="fume-prefetch", daemon=True)
    worker.start()
    try:
        while True:
            item = buffer.get()
            if item is _DONE:
                break
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()
        worker.join(timeout=1.0)
