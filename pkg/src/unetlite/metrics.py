"""Segmentation evaluation: building-class IoU, pixel accuracy, BCE.

Confusions are mergeable value objects, so per-image evaluation can run in
parallel and be reduced afterwards.  IoU/accuracy are computed over the
accumulated dataset-level confusion.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import MetricError, ShapeError

BCE_EPS = 1e-7


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.fp + other.fp,
                         self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _check_binary(name: str, m: np.ndarray):
    if not np.isin(m, (0, 1)).all():
        raise ShapeError(f"{name} must be binary (0/1)")


def update(conf: Confusion, pred_mask: np.ndarray, gt_mask: np.ndarray) -> Confusion:
    """Accumulate pixel counts; positive class (building) is 1."""
    pred = np.asarray(pred_mask)
    gt = np.asarray(gt_mask)
    if pred.shape != gt.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    _check_binary("pred_mask", pred)
    _check_binary("gt_mask", gt)
    p = pred.astype(bool)
    g = gt.astype(bool)
    return conf + Confusion(
        tp=int(np.count_nonzero(p & g)),
        fp=int(np.count_nonzero(p & ~g)),
        fn=int(np.count_nonzero(~p & g)),
        tn=int(np.count_nonzero(~p & ~g)),
    )


def iou(conf: Confusion) -> float:
    denom = conf.tp + conf.fp + conf.fn
    if denom == 0:
        raise MetricError("IoU undefined: no predicted or actual positives")
    return conf.tp / denom


def accuracy(conf: Confusion) -> float:
    if conf.total == 0:
        raise MetricError("accuracy undefined over zero pixels")
    return (conf.tp + conf.tn) / conf.total


def bce(pred_prob: np.ndarray, gt: np.ndarray) -> float:
    """Mean binary cross entropy with probabilities clamped away from {0,1}."""
    p = np.asarray(pred_prob, dtype=np.float64)
    y = np.asarray(gt, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"shapes differ: {p.shape} vs {y.shape}")
    if p.min() < 0 or p.max() > 1:
        raise ShapeError("probabilities must lie in [0, 1]")
    _check_binary("gt", np.asarray(gt))
    p = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def eval_csv(n_images: int, conf: Confusion) -> str:
    out = io.StringIO()
    out.write("images,tp,fp,fn,tn,iou,accuracy\n")
    out.write(f"{n_images},{conf.tp},{conf.fp},{conf.fn},{conf.tn},"
              f"{iou(conf):.6f},{accuracy(conf):.6f}\n")
    return out.getvalue()
