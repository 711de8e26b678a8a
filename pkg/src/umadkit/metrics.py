"""Pixel-pooled anomaly detection metrics.

Scores from all frames are pooled into one global curve.  Thresholds are
the distinct score values scanned in descending order with the decision
rule "score >= threshold is flagged"; equal scores always move as one
group.  The ranking statistics are accumulated in integer arithmetic, so
AUROC is exact up to one final division.

Each fast metric has a brute-force oracle (pairwise AUROC, per-threshold
re-scans for AP and FPR95) intended for tests on small inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core_io import (
    IGNORE_LABEL,
    AnomalyMap,
    BinaryLabelMap,
    ContractError,
    _require,
)

ORACLE_LIMIT = 10_000


def pool(
    frames: Sequence[tuple[AnomalyMap, BinaryLabelMap]]
) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate all non-ignored pixels into parallel score/label arrays."""
    scores: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    for amap, gt in frames:
        _require(amap.data.shape == gt.data.shape,
                 f"map shape {amap.data.shape} does not match labels {gt.data.shape}")
        keep = gt.data != IGNORE_LABEL
        scores.append(amap.data[keep])
        labels.append(gt.data[keep])
    if not scores:
        return np.empty(0, dtype=np.float32), np.empty(0, dtype=np.uint8)
    return np.concatenate(scores), np.concatenate(labels)


def _check_binary(scores: np.ndarray, labels: np.ndarray) -> tuple[int, int]:
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    _require(scores.ndim == 1 and labels.ndim == 1 and scores.size == labels.size,
             "scores and labels must be parallel 1-d arrays")
    _require(bool(np.isfinite(scores).all()), "scores must be finite")
    num_pos = int(np.count_nonzero(labels))
    num_neg = int(labels.size - num_pos)
    return num_pos, num_neg


def _ranked_groups(
    scores: np.ndarray, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Positive/negative counts per distinct score, descending by score."""
    _, inverse = np.unique(np.asarray(scores), return_inverse=True)
    n_groups = int(inverse.max()) + 1
    pos = np.bincount(inverse, weights=(np.asarray(labels) != 0), minlength=n_groups)
    total = np.bincount(inverse, minlength=n_groups)
    pos = pos.astype(np.int64)
    neg = total.astype(np.int64) - pos
    # np.unique sorts ascending; metrics scan thresholds descending.
    return pos[::-1], neg[::-1]


def auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Probability a positive outscores a negative, ties counted half."""
    num_pos, num_neg = _check_binary(scores, labels)
    _require(num_pos >= 1 and num_neg >= 1,
             "AUROC needs at least one positive and one negative")
    pos, neg = _ranked_groups(scores, labels)
    return _auroc_from_groups(pos, neg, num_pos, num_neg)


def _auroc_from_groups(
    pos: np.ndarray, neg: np.ndarray, num_pos: int, num_neg: int
) -> float:
    neg_at_or_above = np.cumsum(neg)
    neg_strictly_below = num_neg - neg_at_or_above
    # Each positive in a group beats every strictly lower negative and
    # half-ties with negatives in its own group; doubled to stay integral.
    numerator = int(np.sum(pos * (2 * neg_strictly_below + neg)))
    return numerator / (2.0 * num_pos * num_neg)


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the precision-recall curve over descending thresholds."""
    num_pos, _ = _check_binary(scores, labels)
    _require(num_pos >= 1, "average precision needs at least one positive")
    pos, neg = _ranked_groups(scores, labels)
    return _ap_from_groups(pos, neg, num_pos)


def _ap_from_groups(pos: np.ndarray, neg: np.ndarray, num_pos: int) -> float:
    tp = np.cumsum(pos)
    predicted = np.cumsum(pos + neg)
    precision = tp / predicted
    recall_step = pos / num_pos
    return float(np.sum(recall_step * precision))


def fpr_at_95_tpr(scores: np.ndarray, labels: np.ndarray) -> float:
    """FPR at the highest threshold with TPR >= 0.95; no interpolation."""
    num_pos, num_neg = _check_binary(scores, labels)
    _require(num_pos >= 1 and num_neg >= 1,
             "FPR95 needs at least one positive and one negative")
    pos, neg = _ranked_groups(scores, labels)
    return _fpr95_from_groups(pos, neg, num_pos, num_neg)


def _fpr95_from_groups(
    pos: np.ndarray, neg: np.ndarray, num_pos: int, num_neg: int
) -> float:
    tp = np.cumsum(pos)
    fp = np.cumsum(neg)
    # TPR >= 0.95 tested in integers: 20 * tp >= 19 * P.
    reached = np.nonzero(20 * tp >= 19 * num_pos)[0]
    first = int(reached[0])
    return float(fp[first]) / num_neg


@dataclass(frozen=True)
class EvalReport:
    """Pooled metric results plus the pixel counts behind them."""

    ap: float
    fpr95: float
    auroc: float
    num_positive: int
    num_negative: int
    num_ignored: int

    def to_text(self) -> str:
        return (
            f"pixels: positive={self.num_positive} negative={self.num_negative}"
            f" ignored={self.num_ignored}\n"
            f"AP     {100.0 * self.ap:.2f} %\n"
            f"FPR95  {100.0 * self.fpr95:.2f} %\n"
            f"AUROC  {100.0 * self.auroc:.2f} %\n"
        )


def evaluate_pooled(
    scores: np.ndarray, labels: np.ndarray, num_ignored: int = 0
) -> EvalReport:
    """All three metrics from one shared ranking pass."""
    num_pos, num_neg = _check_binary(scores, labels)
    _require(num_pos >= 1 and num_neg >= 1,
             "evaluation needs at least one positive and one negative pixel")
    pos, neg = _ranked_groups(scores, labels)
    return EvalReport(
        ap=_ap_from_groups(pos, neg, num_pos),
        fpr95=_fpr95_from_groups(pos, neg, num_pos, num_neg),
        auroc=_auroc_from_groups(pos, neg, num_pos, num_neg),
        num_positive=num_pos,
        num_negative=num_neg,
        num_ignored=num_ignored,
    )


def _check_oracle_size(scores: np.ndarray) -> None:
    _require(len(scores) <= ORACLE_LIMIT,
             f"oracles accept at most {ORACLE_LIMIT} points")


def oracle_auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """O(n^2) pairwise AUROC for cross-checking the fast version."""
    _check_oracle_size(scores)
    num_pos, num_neg = _check_binary(scores, labels)
    _require(num_pos >= 1 and num_neg >= 1,
             "AUROC needs at least one positive and one negative")
    s = np.asarray(scores, dtype=np.float64)
    l = np.asarray(labels) != 0
    p = s[l][:, None]
    n = s[~l][None, :]
    wins = np.sum(p > n) + 0.5 * np.sum(p == n)
    return float(wins) / (num_pos * num_neg)


def oracle_ap(scores: np.ndarray, labels: np.ndarray) -> float:
    """AP by explicit re-scan at every distinct threshold."""
    _check_oracle_size(scores)
    num_pos, _ = _check_binary(scores, labels)
    _require(num_pos >= 1, "average precision needs at least one positive")
    s = np.asarray(scores, dtype=np.float64)
    l = np.asarray(labels) != 0
    thresholds = np.unique(s)[::-1]
    ap = 0.0
    prev_recall = 0.0
    for t in thresholds:
        flagged = s >= t
        tp = int(np.count_nonzero(flagged & l))
        predicted = int(np.count_nonzero(flagged))
        recall = tp / num_pos
        precision = tp / predicted
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def oracle_fpr95(scores: np.ndarray, labels: np.ndarray) -> float:
    """FPR95 by explicit re-scan at every distinct threshold."""
    _check_oracle_size(scores)
    num_pos, num_neg = _check_binary(scores, labels)
    _require(num_pos >= 1 and num_neg >= 1,
             "FPR95 needs at least one positive and one negative")
    s = np.asarray(scores, dtype=np.float64)
    l = np.asarray(labels) != 0
    for t in np.unique(s)[::-1]:
        flagged = s >= t
        tp = int(np.count_nonzero(flagged & l))
        if 20 * tp >= 19 * num_pos:
            fp = int(np.count_nonzero(flagged & ~l))
            return fp / num_neg
    raise AssertionError("unreachable: the lowest threshold flags everything")
