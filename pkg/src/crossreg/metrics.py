"""Segmentation losses, overlap metrics and the intensity/label MI estimator.

Losses work on soft counts (``TP = sum(p * g)`` and so on) so the same code
serves probabilistic and binary predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ParameterError, ShapeError
from .volume import Volume

__all__ = [
    "SoftPrediction",
    "TverskyParams",
    "dice_loss",
    "tversky_index",
    "focal_tversky_loss",
    "jaccard",
    "dice_coefficient",
    "median_score",
    "localization_hit",
    "mutual_information",
]


@dataclass(frozen=True, eq=False, repr=False)
class SoftPrediction(Volume):
    """Per-voxel foreground probabilities in [0, 1]."""

    def __post_init__(self):
        super().__post_init__()
        if self.data.size and (self.data.min() < 0 or self.data.max() > 1):
            raise ParameterError("probabilities must lie in [0, 1]")

    @classmethod
    def from_mask(cls, mask):
        return cls(mask.data.astype(np.float64), mask.spacing, mask.origin)


@dataclass(frozen=True)
class TverskyParams:
    alpha: float = 0.7
    beta: float = 0.3
    gamma: float = 0.75
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ParameterError(f"need alpha, beta >= 0 with alpha + beta > 0, got {self.alpha}, {self.beta}")
        if not self.gamma > 0:
            raise ParameterError(f"gamma must be positive, got {self.gamma}")
        if not self.epsilon > 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")


def _probabilities(x):
    return np.asarray(x.data, dtype=np.float64)


def _pair(pred, gt, what):
    if tuple(pred.dims) != tuple(gt.dims):
        raise ShapeError(f"{what}: dims {pred.dims} and {gt.dims} differ")
    return _probabilities(pred).ravel(), _probabilities(gt).ravel()


def dice_loss(pred, gt, epsilon=1e-6):
    """Smoothed soft Dice loss ``1 - (2 TP + eps) / (sum p + sum g + eps)``.

    Both-empty inputs give 0, which the smoothing term forces.
    """
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    p, g = _pair(pred, gt, "dice_loss")
    return float(1.0 - (2.0 * np.dot(p, g) + epsilon) / (p.sum() + g.sum() + epsilon))


def tversky_index(pred, gt, alpha=0.5, beta=0.5):
    """``TP / (TP + alpha FN + beta FP)`` with soft counts.

    Returns 1 when the denominator vanishes (nothing predicted, nothing to find).
    """
    if alpha < 0 or beta < 0:
        raise ParameterError(f"alpha and beta must be non-negative, got {alpha}, {beta}")
    p, g = _pair(pred, gt, "tversky_index")
    tp = np.dot(p, g)
    fn = np.dot(1.0 - p, g)
    fp = np.dot(p, 1.0 - g)
    denom = tp + alpha * fn + beta * fp
    if denom <= 0:
        return 1.0
    return float(tp / denom)


def focal_tversky_loss(pred, gt, params=None):
    """``(1 - TI) ** gamma`` using the Tversky weights of ``params``."""
    params = params or TverskyParams()
    ti = tversky_index(pred, gt, params.alpha, params.beta)
    return float(max(0.0, 1.0 - ti) ** params.gamma)


def _binary_pair(a, b, what):
    if tuple(a.dims) != tuple(b.dims):
        raise ShapeError(f"{what}: dims {a.dims} and {b.dims} differ")
    return np.asarray(a.data).astype(bool), np.asarray(b.data).astype(bool)


def jaccard(a, b):
    """Intersection over union of two masks; 1 when both are empty."""
    x, y = _binary_pair(a, b, "jaccard")
    union = np.count_nonzero(x | y)
    if union == 0:
        return 1.0
    return np.count_nonzero(x & y) / union


def dice_coefficient(a, b):
    """``2 |A & B| / (|A| + |B|)``; 1 when both masks are empty."""
    x, y = _binary_pair(a, b, "dice_coefficient")
    total = np.count_nonzero(x) + np.count_nonzero(y)
    if total == 0:
        return 1.0
    return 2.0 * np.count_nonzero(x & y) / total


def median_score(values):
    """Median of a non-empty sequence (mean of the middle pair for even length)."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ParameterError("median_score needs at least one value")
    return float(np.median(arr))


def localization_hit(pred, gt):
    """True if the rounded centroid of ``pred`` is a foreground voxel of ``gt``.

    An empty prediction never localises.
    """
    x, y = _binary_pair(pred, gt, "localization_hit")
    if not y.any():
        raise ParameterError("localization_hit: ground-truth mask is empty")
    if not x.any():
        return False
    centroid = np.argwhere(x).mean(axis=0)
    idx = np.floor(centroid + 0.5).astype(int)
    return bool(y[tuple(idx)])


def mutual_information(intensity, labels, n_bins=32, roi=None):
    """Plug-in mutual information between binned intensity and label, in bits.

    Intensities are assigned to ``n_bins`` equal-width bins over [0, 1]
    (values outside are clamped into the end bins).  Only voxels inside
    ``roi`` are counted when it is given.
    """
    if int(n_bins) != n_bins or n_bins < 2:
        raise ParameterError(f"n_bins must be an integer >= 2, got {n_bins}")
    if tuple(intensity.dims) != tuple(labels.dims):
        raise ShapeError(f"mutual_information: dims {intensity.dims} and {labels.dims} differ")
    values = np.asarray(intensity.data, dtype=np.float64)
    lab = np.asarray(labels.data).astype(bool)
    if roi is not None:
        if tuple(roi.dims) != tuple(intensity.dims):
            raise ShapeError(f"mutual_information: roi dims {roi.dims} differ from {intensity.dims}")
        inside = np.asarray(roi.data).astype(bool)
        if not inside.any():
            raise ParameterError("mutual_information: roi is empty")
        values, lab = values[inside], lab[inside]
    else:
        values, lab = values.ravel(), lab.ravel()
    bins = np.clip((values * n_bins).astype(np.int64), 0, int(n_bins) - 1)
    joint = np.zeros((int(n_bins), 2))
    np.add.at(joint, (bins, lab.astype(np.int64)), 1.0)
    joint /= joint.sum()
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    mi = np.sum(joint[nz] * np.log2(joint[nz] / (px @ py)[nz]))
    return float(max(mi, 0.0))
