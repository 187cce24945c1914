"""Object-centricity metric: threshold sweeps of seed-patch affinity maps
against object masks, trial-averaged ROC curves, and AUC.

The seed patch is excluded from both the object and background counts; its
affinity is identically 1 and would inflate TPR at every threshold.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .affinity import AffinityMap
from .tensorio import PatchMask


class DegenerateMaskError(ValueError):
    """Mask is all-object or all-background once the seed is excluded."""


@dataclass(frozen=True)
class ThresholdGrid:
    """Strictly decreasing thresholds spanning the affinity range."""

    thresholds: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.thresholds, dtype=np.float64))
        if arr.ndim != 1 or len(arr) < 1:
            raise ValueError("thresholds must be a nonempty 1-D sequence")
        if not np.all(np.diff(arr) < 0):
            raise ValueError("thresholds must be strictly decreasing")
        arr.flags.writeable = False
        object.__setattr__(self, "thresholds", arr)

    def __len__(self) -> int:
        return len(self.thresholds)


@dataclass(frozen=True)
class ROCCurve:
    """Ordered (fpr, tpr) points from (0,0) to (1,1) plus trapezoidal AUC."""

    points: np.ndarray  # (k, 2) columns fpr, tpr
    auc: float

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError("points must be (k, 2)")
        if not (arr[0] == 0.0).all() or not (arr[-1] == 1.0).all():
            raise ValueError("curve must begin at (0,0) and end at (1,1)")
        if np.any(np.diff(arr[:, 0]) < 0):
            raise ValueError("fpr must be nondecreasing")
        if abs(self.auc - np.trapezoid(arr[:, 1], arr[:, 0])) > 1e-9:
            raise ValueError("auc inconsistent with trapezoidal integral")
        arr.flags.writeable = False
        object.__setattr__(self, "points", arr)


def default_grid(n: int = 201) -> ThresholdGrid:
    """Uniform decreasing thresholds over [-1, 1]."""
    return ThresholdGrid(np.linspace(1.0, -1.0, n))


def grid_from_values(values: np.ndarray) -> ThresholdGrid:
    """Grid of all distinct values, decreasing (for exact per-trial AUC)."""
    return ThresholdGrid(np.unique(np.asarray(values, dtype=np.float64))[::-1])


def _split_scores(aff: AffinityMap, mask: PatchMask):
    if (aff.h, aff.w) != (mask.h, mask.w):
        raise ValueError(
            f"affinity grid {(aff.h, aff.w)} != mask grid {(mask.h, mask.w)}"
        )
    values = aff.values.ravel()
    bits = mask.bits.ravel().copy()
    keep = np.ones_like(bits)
    keep[aff.seed[0] * aff.w + aff.seed[1]] = False
    obj = values[keep & bits]
    bg = values[keep & ~bits]
    if len(obj) == 0 or len(bg) == 0:
        raise DegenerateMaskError(
            "mask must have both object and background patches beside the seed"
        )
    return obj, bg


def sweep(aff: AffinityMap, mask: PatchMask, grid: ThresholdGrid) -> list[tuple[float, float]]:
    """(fpr, tpr) per threshold, ordered by decreasing threshold.

    active = {p != seed : aff[p] >= theta}; tpr over object patches (seed
    excluded), fpr over background patches.
    """
    obj, bg = _split_scores(aff, mask)
    thetas = grid.thresholds
    tpr = (obj[None, :] >= thetas[:, None]).mean(axis=1)
    fpr = (bg[None, :] >= thetas[:, None]).mean(axis=1)
    return list(zip(fpr.tolist(), tpr.tolist()))


def curve_from_points(points: list[tuple[float, float]]) -> ROCCurve:
    """Close a sweep into an ROC curve with (0,0)/(1,1) endpoints and AUC."""
    arr = np.asarray(points, dtype=np.float64)
    arr = np.vstack([[0.0, 0.0], arr, [1.0, 1.0]])
    auc = float(np.trapezoid(arr[:, 1], arr[:, 0]))
    return ROCCurve(points=arr, auc=auc)


def average_curves(per_trial: list[list[tuple[float, float]]]) -> ROCCurve:
    """Pointwise mean of per-trial sweeps sharing one grid, closed into a curve."""
    if not per_trial:
        raise ValueError("need at least one trial")
    k = len(per_trial[0])
    if any(len(p) != k for p in per_trial):
        raise ValueError("all trials must share the same threshold grid")
    mean = np.asarray(per_trial, dtype=np.float64).mean(axis=0)
    return curve_from_points([tuple(row) for row in mean])


def auc_rank_oracle(aff: AffinityMap, mask: PatchMask) -> float:
    """Mann-Whitney AUC: P(random object patch outranks a random background
    patch), ties counted half. Independent of the threshold-sweep path."""
    obj, bg = _split_scores(aff, mask)
    scores = np.concatenate([obj, bg])
    ranks = rankdata(scores, method="average")
    n_obj, n_bg = len(obj), len(bg)
    u = ranks[:n_obj].sum() - n_obj * (n_obj + 1) / 2.0
    return float(u / (n_obj * n_bg))
