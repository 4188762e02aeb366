"""mIoU evaluation via a global confusion matrix.

One confusion matrix is accumulated over all images (rows = reference,
columns = prediction); IoU_c = TP / (TP + FP + FN).  Classes absent
from both prediction and reference (zero union) are excluded from the
mean.
"""

from __future__ import annotations

import numpy as np


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != reference shape {gt.shape}")
    if pred.size == 0:
        return np.zeros((num_classes, num_classes), dtype=np.int64)
    for name, arr in (("prediction", pred), ("reference", gt)):
        lo, hi = int(arr.min()), int(arr.max())
        if lo < 0 or hi >= num_classes:
            raise ValueError(f"{name} indices span [{lo}, {hi}], outside [0, {num_classes})")
    idx = num_classes * gt.reshape(-1).astype(np.int64) + pred.reshape(-1).astype(np.int64)
    counts = np.bincount(idx, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def iou_from_confusion(cm: np.ndarray) -> tuple[float, np.ndarray]:
    """(mIoU over classes with nonzero union, per-class IoU with NaN elsewhere)."""
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=1) + cm.sum(axis=0) - np.diag(cm)
    ious = np.full(cm.shape[0], np.nan)
    nonzero = union > 0
    ious[nonzero] = tp[nonzero] / union[nonzero]
    if not nonzero.any():
        return float("nan"), ious
    return float(np.nanmean(ious)), ious


def miou(predictions, references, num_classes: int) -> tuple[float, np.ndarray]:
    """Accumulate one global confusion matrix over paired label maps."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for pred, gt in zip(predictions, references):
        cm += confusion_matrix(pred, gt, num_classes)
    return iou_from_confusion(cm)
