"""Agreement metrics between predicted and reference quality scores.

Two rank statistics drive model selection:

* linear correlation (Pearson), computed from centred sums,
* rank correlation (Spearman), computed as the linear correlation of
  fractional average ranks, which on tie-free data equals the classic
  ``1 - 6 * sum(d^2) / (n * (n^2 - 1))``.

Both are undefined when either vector is constant; in that case they return
NaN rather than a silently misleading zero. Classification quality of the
auxiliary class head is summarised by accuracy, macro-averaged precision,
recall, F1, and a confusion matrix with true classes along the rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


def _paired(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise ShapeError(
            f"correlation needs equal-length vectors, got shapes {x.shape} and {y.shape}"
        )
    if x.size < 2:
        raise ShapeError(f"correlation needs at least 2 samples, got {x.size}")
    return x, y


def plcc(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson linear correlation coefficient; NaN if either input is constant."""
    x, y = _paired(x, y)
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0.0:
        return float("nan")
    return float((xc * yc).sum() / denom)


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they occupy."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"ranks need a vector, got shape {x.shape}")
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and xs[j + 1] == xs[i]:
            j += 1
        # positions i..j (0-based) hold a tie group; mean 1-based rank.
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def srocc(x: np.ndarray, y: np.ndarray) -> float:
    """Spearman rank-order correlation; NaN if either input is constant."""
    x, y = _paired(x, y)
    return plcc(average_ranks(x), average_ranks(y))


@dataclass(frozen=True)
class ClassificationReport:
    """Summary of a multi-class prediction run.

    ``confusion[t, p]`` counts samples of true class ``t`` predicted as
    ``p``. Macro averages treat per-class precision/recall/F1 for a class
    absent from both truth and prediction as zero.
    """

    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: np.ndarray


def classification_report(
    true_classes: np.ndarray, pred_classes: np.ndarray, num_classes: int
) -> ClassificationReport:
    true_classes = np.asarray(true_classes)
    pred_classes = np.asarray(pred_classes)
    if true_classes.shape != pred_classes.shape or true_classes.ndim != 1:
        raise ShapeError(
            f"class vectors must match, got shapes {true_classes.shape} and "
            f"{pred_classes.shape}"
        )
    if true_classes.size == 0:
        raise ShapeError("classification report needs at least one sample")
    for name, v in (("true", true_classes), ("predicted", pred_classes)):
        if v.min() < 0 or v.max() >= num_classes:
            raise ValueError(f"{name} labels must lie in [0, {num_classes})")

    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (true_classes, pred_classes), 1)

    tp = np.diag(confusion).astype(np.float64)
    pred_totals = confusion.sum(axis=0).astype(np.float64)
    true_totals = confusion.sum(axis=1).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(pred_totals > 0, tp / pred_totals, 0.0)
        recall = np.where(true_totals > 0, tp / true_totals, 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2.0 * precision * recall / pr, 0.0)

    return ClassificationReport(
        accuracy=float(tp.sum() / true_classes.size),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        confusion=confusion,
    )
