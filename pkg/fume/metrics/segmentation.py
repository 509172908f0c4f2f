"""fume/metrics/segmentation.py

Region overlap (IoU, Dice) and boundary distance (HD95, ASD) metrics.

Boundary pixels of a class are class pixels with a 4-neighbour outside the
class; pixels on the image border count as boundary. Boundary distances
are taken from the exact Euclidean distance transform, pooled over both
directions (prediction to truth and truth to prediction).
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from fume.errors import ShapeError

NUM_CLASSES = 3
_CROSS = ndimage.generate_binary_structure(2, 1)


def _binary(pred_mask: np.ndarray, gt_mask: np.ndarray, class_id: int) -> Tuple[np.ndarray, np.ndarray]:
    pred_mask = np.asarray(pred_mask)
    gt_mask = np.asarray(gt_mask)
    if pred_mask.shape != gt_mask.shape:
        raise ShapeError(f"mask shapes differ: {pred_mask.shape} vs {gt_mask.shape}")
    return pred_mask == class_id, gt_mask == class_id


def iou(pred_mask: np.ndarray, gt_mask: np.ndarray, class_id: int) -> float:
    """|P & G| / |P | G|; 1.0 when the class is absent from both."""
    p, g = _binary(pred_mask, gt_mask, class_id)
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


def dice_coeff(pred_mask: np.ndarray, gt_mask: np.ndarray, class_id: int) -> float:
    """2|P & G| / (|P| + |G|); 1.0 when the class is absent from both."""
    p, g = _binary(pred_mask, gt_mask, class_id)
    total = p.sum() + g.sum()
    if total == 0:
        return 1.0
    return float(2.0 * np.logical_and(p, g).sum() / total)


def boundary(region: np.ndarray) -> np.ndarray:
    """4-connected inner boundary of a 2-D boolean region."""
    region = np.asarray(region, dtype=bool)
    if region.ndim != 2:
        raise ShapeError(f"boundary extraction needs a 2-D mask, got shape {region.shape}")
    eroded = ndimage.binary_erosion(region, structure=_CROSS, border_value=0)
    return region & ~eroded


def surface_distances(pred_mask: np.ndarray, gt_mask: np.ndarray, class_id: int) -> Optional[np.ndarray]:
    """
    Pooled directed boundary distances, both directions.

    Returns:
        1-D array of distances, or None when either region is empty
    """
    p, g = _binary(pred_mask, gt_mask, class_id)
    if not p.any() or not g.any():
        return None
    pb, gb = boundary(p), boundary(g)
    to_gt = ndimage.distance_transform_edt(~gb)
    to_pred = ndimage.distance_transform_edt(~pb)
    return np.concatenate([to_gt[pb], to_pred[gb]])


def nearest_rank_95(distances: np.ndarray) -> float:
    """Smallest distance with at least 95% of the values at or below it."""
    rank = (95 * distances.size + 99) // 100
    return float(np.partition(distances, rank - 1)[rank - 1])


def hd95(pred_mask: np.ndarray, gt_mask: np.ndarray, class_id: int) -> Optional[float]:
    """Nearest-rank 95th percentile of pooled boundary distances; None if undefined."""
    distances = surface_distances(pred_mask, gt_mask, class_id)
    if distances is None:
        return None
    return nearest_rank_95(distances)


def asd(pred_mask: np.ndarray, gt_mask: np.ndarray, class_id: int) -> Optional[float]:
    """Mean of pooled boundary distances; None if undefined."""
    distances = surface_distances(pred_mask, gt_mask, class_id)
    if distances is None:
        return None
    return float(distances.mean())


@dataclass
class SegmentationAccumulator:
    """Dataset-level per-class intersection and area counts for one head."""
    intersection: np.ndarray = field(default_factory=lambda: np.zeros(NUM_CLASSES, dtype=np.int64))
    pred_area: np.ndarray = field(default_factory=lambda: np.zeros(NUM_CLASSES, dtype=np.int64))
    gt_area: np.ndarray = field(default_factory=lambda: np.zeros(NUM_CLASSES, dtype=np.int64))
    images: int = 0

    def update(self, pred_mask: np.ndarray, gt_mask: np.ndarray) -> None:
        for c in range(NUM_CLASSES):
            p, g = _binary(pred_mask, gt_mask, c)
            self.intersection[c] += int(np.logical_and(p, g).sum())
            self.pred_area[c] += int(p.sum())
            self.gt_area[c] += int(g.sum())
        self.images += 1

    def iou_per_class(self) -> Tuple[float, ...]:
        union = self.pred_area + self.gt_area - self.intersection
        return tuple(1.0 if u == 0 else float(i / u) for i, u in zip(self.intersection, union))

    def dice_per_class(self) -> Tuple[float, ...]:
        total = self.pred_area + self.gt_area
        return tuple(1.0 if t == 0 else float(2 * i / t) for i, t in zip(self.intersection, total))

    def mean_iou(self) -> float:
        return float(np.mean(self.iou_per_class()))

    def mean_dice(self) -> float:
        return float(np.mean(self.dice_per_class()))


@dataclass
class BoundaryAccumulator:
    """Averages of per-image HD95/ASD with a count of undefined cases."""
    hd95_values: List[float] = field(default_factory=list)
    asd_values: List[float] = field(default_factory=list)
    excluded: int = 0

    def update(self, pred_mask: np.ndarray, gt_mask: np.ndarray, class_id: int) -> None:
        distances = surface_distances(pred_mask, gt_mask, class_id)
        if distances is None:
            self.excluded += 1
            return
        self.hd95_values.append(nearest_rank_95(distances))
        self.asd_values.append(float(distances.mean()))

    @property
    def hd95(self) -> Optional[float]:
        return float(np.mean(self.hd95_values)) if self.hd95_values else None

    @property
    def asd(self) -> Optional[float]:
        return float(np.mean(self.asd_values)) if self.asd_values else None
