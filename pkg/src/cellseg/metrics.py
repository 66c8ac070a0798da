"""Pixel-wise segmentation metrics.

Zero-denominator convention: a ratio whose denominator is zero is 1.0 when
neither prediction nor target has any foreground (a correctly blank frame)
and 0.0 otherwise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, ShapeError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def blank(self) -> bool:
        return self.tp == 0 and self.fp == 0 and self.fn == 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


CSV_FIELDS = ("dataset", "seed", "precision", "recall", "f1", "auroc", "miou", "threshold", "n_images")
METRIC_NAMES = ("precision", "recall", "f1", "auroc", "miou")


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    auroc: float
    miou: float
    threshold: float = 0.5
    n_images: int = 0

    def as_dict(self) -> dict:
        return asdict(self)

    def csv_row(self, dataset: str = "", seed: int | str = "") -> dict:
        return {"dataset": dataset, "seed": seed, **self.as_dict()}

    def table(self, title: str = "") -> str:
        head = f"{'metric':<10} {'value':>8}"
        lines = [title] if title else []
        lines += [head, "-" * len(head)]
        lines += [f"{name:<10} {getattr(self, name):>8.4f}" for name in METRIC_NAMES]
        lines.append(f"{'threshold':<10} {self.threshold:>8.4f}")
        lines.append(f"{'n_images':<10} {self.n_images:>8d}")
        return "\n".join(lines)


def confusion_counts(pred_prob, target, threshold: float = 0.5) -> ConfusionCounts:
    """Count pixels; a prediction is positive iff ``prob >= threshold``."""
    pred_prob = np.asarray(pred_prob)
    target = np.asarray(getattr(target, "pixels", target))
    if pred_prob.shape != target.shape:
        raise ShapeError(f"prediction shape {pred_prob.shape} != target shape {target.shape}")
    pred = pred_prob >= threshold
    truth = target.astype(bool)
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


def _ratio(num: int, den: int, blank: bool) -> float:
    if den == 0:
        return 1.0 if blank else 0.0
    return num / den


def precision(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp, c.blank)


def recall(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn, c.blank)


def f1(c: ConfusionCounts) -> float:
    return _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, c.blank)


def iou(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp + c.fn, c.blank)


def miou(per_image: Iterable) -> float:
    """Unweighted mean foreground IoU; items may be ConfusionCounts or IoU values."""
    values = [iou(x) if isinstance(x, ConfusionCounts) else float(x) for x in per_image]
    if not values:
        raise DataError("mIoU needs at least one image")
    return math.fsum(values) / len(values)


def auroc(pred_prob, target) -> float:
    """Probability that a random positive outranks a random negative (ties count 1/2).

    Computed from mid-ranks (Mann-Whitney U): ``(R_pos - P(P+1)/2) / (P*N)``,
    which equals the trapezoidal area under the full ROC curve.
    """
    scores = np.asarray(pred_prob, dtype=np.float64).ravel()
    labels = np.asarray(getattr(target, "pixels", target)).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise ShapeError(f"{scores.size} scores vs {labels.size} labels")
    n_pos = int(np.count_nonzero(labels))
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AuROC needs at least one positive and one negative pixel")
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    # mid-rank of each tie group, 1-based
    starts = np.flatnonzero(np.r_[True, sorted_scores[1:] != sorted_scores[:-1]])
    ends = np.r_[starts[1:], scores.size]
    group_rank = (starts + 1 + ends) / 2.0
    ranks = np.empty(scores.size)
    ranks[order] = np.repeat(group_rank, ends - starts)
    rank_sum = math.fsum(ranks[labels])
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def report_from_predictions(probs: Sequence[np.ndarray], targets: Sequence[np.ndarray],
                            threshold: float = 0.5, average: str = "pooled") -> MetricsReport:
    """Aggregate per-image predictions into a report.

    ``average="pooled"`` sums confusion counts over every pixel before taking
    precision/recall/F1; ``"image"`` averages the per-image values instead.
    mIoU is always the mean of per-image IoU and AuROC is pooled over pixels.
    """
    if not probs:
        raise DataError("cannot evaluate an empty test set")
    if average not in ("pooled", "image"):
        raise ValueError(f"average must be 'pooled' or 'image', got {average!r}")
    counts = [confusion_counts(p, t, threshold) for p, t in zip(probs, targets)]
    if average == "pooled":
        total = sum(counts, ConfusionCounts())
        prec, rec, f = precision(total), recall(total), f1(total)
    else:
        n = len(counts)
        prec = math.fsum(map(precision, counts)) / n
        rec = math.fsum(map(recall, counts)) / n
        f = math.fsum(map(f1, counts)) / n
    flat_p = np.concatenate([np.ravel(p) for p in probs])
    flat_t = np.concatenate([np.ravel(t) for t in targets])
    try:
        roc = auroc(flat_p, flat_t)
    except DataError:
        warnings.warn("test targets contain a single class; AuROC is undefined (reported as NaN)")
        roc = float("nan")
    return MetricsReport(prec, rec, f, roc, miou(counts), threshold, len(counts))


def predict_dataset(model, ds, batch_size: int = 2) -> list[np.ndarray]:
    """Per-image probability maps ``C_out x H x W`` for every sample in ``ds``."""
    from .imagedata import BatchIterator

    out: list[np.ndarray] = []
    for images, _ in BatchIterator(ds, batch_size, dtype=model.dtype).batches(0):
        out.extend(model.forward(images))
    return out


def evaluate(model, test_ds, threshold: float = 0.5, *, batch_size: int = 2,
             average: str = "pooled") -> MetricsReport:
    """Run ``model`` over ``test_ds`` and score it.

    With several output channels the mask is replicated across channels and
    every channel's pixels count.
    """
    if len(test_ds) == 0:
        raise DataError("cannot evaluate an empty test set")
    probs = predict_dataset(model, test_ds, batch_size)
    k = model.config.out_channels
    targets = [np.repeat(mask.pixels[None], k, axis=0) for _, mask in test_ds]
    return report_from_predictions(probs, targets, threshold, average)
