"""Pixel-level detection metrics: 3-D ROC with the AUC family, IoU and F1.

All counts aggregate over every frame of a sequence before any ratio is
taken.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_N_TAU = 256


@dataclass(frozen=True)
class Roc3dCurve:
    tau: np.ndarray  # descending from 1 to 0
    fpr: np.ndarray
    tpr: np.ndarray
    n_pos: int
    n_neg: int

    def rows(self):
        return list(zip(self.tau.tolist(), self.fpr.tolist(), self.tpr.tolist()))


@dataclass(frozen=True)
class AucReport:
    auc_roc: float
    auc_tau_fpr: float
    auc_tau_tpr: float
    auc_bs: float
    auc_td: float
    auc_tdbs: float
    auc_odp: float
    auc_snpr: float

    @classmethod
    def from_base(cls, auc_roc, auc_tau_fpr, auc_tau_tpr) -> "AucReport":
        if auc_tau_fpr > 0:
            snpr = auc_tau_tpr / auc_tau_fpr
        else:
            snpr = math.inf
        return cls(
            auc_roc=auc_roc,
            auc_tau_fpr=auc_tau_fpr,
            auc_tau_tpr=auc_tau_tpr,
            auc_bs=auc_roc - auc_tau_fpr,
            auc_td=auc_roc + auc_tau_tpr,
            auc_tdbs=auc_tau_tpr - auc_tau_fpr,
            auc_odp=auc_roc + auc_tau_tpr - auc_tau_fpr,
            auc_snpr=snpr,
        )

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _binary(x, what):
    x = np.asarray(x)
    if x.dtype != bool:
        if not np.all((x == 0) | (x == 1)):
            raise ValueError(f"{what} must be binary (0/1)")
        x = x.astype(bool)
    return x


def _same_dims(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"dimension mismatch: {np.shape(a)} vs {np.shape(b)}")


def roc3d(score, gt, n_tau: int = DEFAULT_N_TAU) -> Roc3dCurve:
    """TPR/FPR of ``score >= tau`` for ``n_tau`` evenly spaced thresholds."""
    score = np.asarray(score, dtype=np.float64)
    _same_dims(score, gt)
    gt = _binary(gt, "ground truth")
    if n_tau < 2:
        raise ValueError("n_tau must be >= 2")
    n_pos = int(gt.sum())
    n_neg = int(gt.size - n_pos)
    if n_pos == 0:
        raise ValueError("ground truth has no target pixels")
    tau = np.linspace(1.0, 0.0, n_tau)
    pos = np.sort(score[gt])
    neg = np.sort(score[~gt])
    # count of entries >= tau via the sorted arrays
    tp = pos.size - np.searchsorted(pos, tau, side="left")
    fp = neg.size - np.searchsorted(neg, tau, side="left")
    fpr = fp / n_neg if n_neg else np.zeros(n_tau)
    return Roc3dCurve(tau=tau, fpr=np.asarray(fpr, float), tpr=tp / n_pos, n_pos=n_pos, n_neg=n_neg)


def _trapezoid(y, x):
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def auc_family(curve: Roc3dCurve) -> AucReport:
    # anchor the ROC at the origin, then integrate along increasing FPR
    fpr = np.concatenate(([0.0], curve.fpr))
    tpr = np.concatenate(([0.0], curve.tpr))
    order = np.lexsort((tpr, fpr))
    auc_roc = _trapezoid(tpr[order], fpr[order])
    tau = curve.tau[::-1]
    auc_tau_fpr = _trapezoid(curve.fpr[::-1], tau)
    auc_tau_tpr = _trapezoid(curve.tpr[::-1], tau)
    return AucReport.from_base(auc_roc, auc_tau_fpr, auc_tau_tpr)


def confusion(pred, gt):
    _same_dims(pred, gt)
    pred = _binary(pred, "prediction")
    gt = _binary(gt, "ground truth")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return tp, fp, fn


def iou(pred, gt) -> float:
    tp, fp, fn = confusion(pred, gt)
    union = tp + fp + fn
    return 1.0 if union == 0 else tp / union


def f1(pred, gt):
    """Return ``(precision, recall, f1)``."""
    tp, fp, fn = confusion(pred, gt)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    score = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, score
