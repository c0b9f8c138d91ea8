"""Confusion-matrix segmentation metrics."""

import numpy as np

from .association import IGNORE_INDEX


def confusion_matrix(pred, truth, num_classes, ignore_index=IGNORE_INDEX):
    """Rows are ground-truth classes, columns are predicted classes."""
    pred = np.asarray(pred).reshape(-1).astype(np.int64)
    truth = np.asarray(truth).reshape(-1).astype(np.int64)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction {pred.shape} and truth {truth.shape} differ in size")
    keep = truth != ignore_index
    pred, truth = pred[keep], truth[keep]
    if truth.size and (truth.max() >= num_classes or pred.max() >= num_classes or pred.min() < 0):
        raise ValueError("class index out of range")
    return np.bincount(truth * num_classes + pred,
                       minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def iou_from_confusion(cm):
    """Per-class IoU (NaN for classes absent from both prediction and truth) and mIoU."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    denom = cm.sum(axis=0) + cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(denom > 0, tp / denom, np.nan)
    present = denom > 0
    miou = float(iou[present].mean()) if present.any() else 0.0
    return iou, miou
