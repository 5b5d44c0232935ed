"""
Anomaly Scores and Evaluation Metrics.

Per-pixel squared reconstruction error maps, the image-level anomaly score
(mean pixel error), and the four reported metrics: image AUROC, image AP,
pooled pixel AP and the best achievable pooled Dice overlap.
"""

import logging
from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .exceptions import DimensionError, UndefinedMetricError

logger = logging.getLogger(__name__)

DICE_CANDIDATES = 1024


@dataclass
class ErrorMap:
    """Squared error per pixel of one image."""

    values: np.ndarray
    record_id: str = ""

    def normalised(self) -> np.ndarray:
        """Scale to [0, 1] by the map maximum, for display."""
        peak = float(self.values.max()) if self.values.size else 0.0
        return self.values / peak if peak > 0 else np.zeros_like(self.values)


@dataclass
class MetricsSummary:
    auroc: float
    ap: float
    n_normal: int
    n_abnormal: int
    ap_pix: Optional[float] = None
    best_dice: Optional[float] = None
    dice_threshold: Optional[float] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "auroc": self.auroc,
            "ap": self.ap,
            "ap_pix": self.ap_pix,
            "best_dice": self.best_dice,
            "dice_threshold": self.dice_threshold,
            "n_normal": self.n_normal,
            "n_abnormal": self.n_abnormal,
        }


def error_map(x: np.ndarray, x_hat: np.ndarray, record_id: str = "") -> ErrorMap:
    """Elementwise (x - x_hat)^2, squeezed to the image plane."""
    a, b = np.asarray(x, dtype=np.float64), np.asarray(x_hat, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError("error_map inputs differ in shape", a.shape, b.shape)
    diff = a - b
    values = diff * diff
    if values.ndim == 3 and values.shape[0] == 1:
        values = values[0]
    return ErrorMap(values, record_id)


def image_score(emap: ErrorMap) -> float:
    return float(np.mean(emap.values))


def _binary_labels(labels: Sequence[int], n: int) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.shape != (n,):
        raise DimensionError("scores and labels differ in length", (n,), arr.shape)
    return arr.astype(bool)


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney probability that an abnormal sample outscores a normal one."""
    s = np.asarray(scores, dtype=np.float64)
    y = _binary_labels(labels, s.size)
    n_pos = int(y.sum())
    n_neg = s.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUROC needs both classes, got {n_pos} positive and {n_neg} negative"
        )
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Step-wise area under the precision-recall curve; ties keep input order."""
    s = np.asarray(scores, dtype=np.float64)
    y = _binary_labels(labels, s.size)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive")
    ranked = y[np.argsort(-s, kind="stable")]
    precision = np.cumsum(ranked) / np.arange(1, ranked.size + 1)
    return float(precision[ranked].sum() / n_pos)


def _pooled(
    maps: Sequence[ErrorMap], masks: Sequence[np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    if len(maps) != len(masks):
        raise DimensionError("maps and masks differ in count", (len(maps),), (len(masks),))
    if not maps:
        raise UndefinedMetricError("no error maps to evaluate")
    for emap, mask in zip(maps, masks):
        if emap.values.shape != np.shape(mask):
            raise DimensionError(
                f"mask shape disagrees with error map {emap.record_id}",
                emap.values.shape,
                np.shape(mask),
            )
    errors = np.concatenate([m.values.ravel() for m in maps])
    labels = np.concatenate([np.asarray(k).ravel() for k in masks]).astype(bool)
    if not labels.any():
        raise UndefinedMetricError("masks contain no positive pixels")
    return errors, labels


def pixel_ap(maps: Sequence[ErrorMap], masks: Sequence[np.ndarray]) -> float:
    """Average precision over every pooled test pixel."""
    errors, labels = _pooled(maps, masks)
    return average_precision(errors, labels)


def _dice_curve(
    errors: np.ndarray, labels: np.ndarray, thresholds: np.ndarray
) -> np.ndarray:
    """Pooled Dice of ``errors >= t`` for each threshold."""
    order = np.argsort(errors, kind="stable")
    ascending = errors[order]
    positives_below = np.concatenate([[0], np.cumsum(labels[order])])
    n_pos = int(labels.sum())
    idx = np.searchsorted(ascending, thresholds, side="left")
    n_pred = errors.size - idx
    tp = n_pos - positives_below[idx]
    result: np.ndarray = 2.0 * tp / (n_pred + n_pos)
    return result


def dice_at_threshold(
    maps: Sequence[ErrorMap], masks: Sequence[np.ndarray], threshold: float
) -> float:
    errors, labels = _pooled(maps, masks)
    return float(_dice_curve(errors, labels, np.array([threshold]))[0])


def dice_candidates(errors: np.ndarray, limit: int = DICE_CANDIDATES) -> np.ndarray:
    """Distinct error values thinned to ``limit`` evenly spaced ranks plus the median."""
    distinct = np.unique(errors)
    if distinct.size > limit:
        picks = np.unique(np.round(np.linspace(0, distinct.size - 1, limit)).astype(int))
        distinct = distinct[picks]
    median = np.sort(errors)[errors.size // 2]
    return np.unique(np.append(distinct, median))


def best_dice(
    maps: Sequence[ErrorMap], masks: Sequence[np.ndarray]
) -> tuple[float, float]:
    """Maximum pooled Dice over candidate thresholds, with its threshold."""
    errors, labels = _pooled(maps, masks)
    thresholds = dice_candidates(errors)
    curve = _dice_curve(errors, labels, thresholds)
    best = int(np.argmax(curve))
    return float(curve[best]), float(thresholds[best])


def best_dice_exhaustive(
    maps: Sequence[ErrorMap], masks: Sequence[np.ndarray]
) -> tuple[float, float]:
    """Reference maximum over every distinct error value."""
    errors, labels = _pooled(maps, masks)
    best, best_t = -1.0, 0.0
    for t in np.unique(errors):
        predicted = errors >= t
        tp = int(np.sum(predicted & labels))
        dice = 2.0 * tp / (int(predicted.sum()) + int(labels.sum()))
        if dice > best:
            best, best_t = dice, float(t)
    return best, best_t


def summarise(
    normal_maps: Sequence[ErrorMap],
    abnormal_maps: Sequence[ErrorMap],
    abnormal_masks: Optional[Sequence[np.ndarray]] = None,
) -> MetricsSummary:
    """All metrics for one evaluated model; pixel metrics need masks."""
    scores = [image_score(m) for m in normal_maps] + [image_score(m) for m in abnormal_maps]
    labels = [0] * len(normal_maps) + [1] * len(abnormal_maps)
    summary = MetricsSummary(
        auroc=auroc(scores, labels),
        ap=average_precision(scores, labels),
        n_normal=len(normal_maps),
        n_abnormal=len(abnormal_maps),
    )
    if abnormal_masks is not None and any(np.any(m) for m in abnormal_masks):
        all_maps = list(normal_maps) + list(abnormal_maps)
        all_masks = [np.zeros_like(m.values, dtype=np.uint8) for m in normal_maps]
        all_masks += [np.asarray(m) for m in abnormal_masks]
        summary.ap_pix = pixel_ap(all_maps, all_masks)
        summary.best_dice, summary.dice_threshold = best_dice(all_maps, all_masks)
    else:
        logger.info("No lesion masks available; pixel metrics skipped")
    return summary
