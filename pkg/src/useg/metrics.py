"""One-vs-rest confusion accumulation and evaluation metrics.

All metrics are computed from pixel counts pooled over the whole evaluation
set (micro pooling), for a single designated target class.  A metric whose
denominator is zero is reported as undefined (None), never as 0 or NaN.

Total error combines the miss and false-alarm rates as fractions of all
valid pixels, weighted alpha : 1 in favor of misses:

    total_error = alpha/(alpha+1) * fn/total_valid + 1/(alpha+1) * fp/total_valid
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .loss import PixelTargets
from .tensor import ShapeError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total_valid(self):
        return self.tp + self.fp + self.tn + self.fn

    def merge(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)

    __add__ = merge


@dataclass(frozen=True)
class MetricsConfig:
    target_class: int = 2  # corroded, in the default class order
    alpha: float = 10.0

    def validate(self, num_classes):
        if not 0 <= self.target_class < num_classes:
            raise ValueError(f"target_class {self.target_class} out of range "
                             f"0..{num_classes - 1}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        return self


def predict_labels(logits):
    """Per-pixel argmax class; unaffected by any per-pixel logit shift."""
    return logits.argmax(axis=1)


def accumulate(pred, truth, target_class, counts=ConfusionCounts()):
    """Adds this image's one-vs-rest tallies for target_class into counts.

    pred: int labels, same dims as truth.labels.  Only valid pixels are
    counted.  Returns a new ConfusionCounts; the input is not mutated.
    """
    labels, valid = truth.labels, truth.valid
    if pred.shape != labels.shape or valid.shape != labels.shape:
        raise ShapeError(f"pred {pred.shape} / labels {labels.shape} / "
                         f"valid {valid.shape} dims differ")
    v = valid.astype(bool)
    p = (pred == target_class) & v
    t = (labels == target_class) & v
    return counts.merge(ConfusionCounts(
        tp=int((p & t).sum()),
        fp=int((p & ~t).sum()),
        tn=int((~p & ~t & v).sum()),
        fn=int((~p & t).sum()),
    ))


def _ratio(num, den):
    return None if den == 0 else num / den


def dsc(counts):
    return _ratio(2.0 * counts.tp, 2.0 * counts.tp + counts.fp + counts.fn)


def sensitivity(counts):
    return _ratio(float(counts.tp), counts.tp + counts.fn)


def specificity(counts):
    return _ratio(float(counts.tn), counts.tn + counts.fp)


def total_error(counts, config=MetricsConfig()):
    if counts.total_valid == 0:
        raise ValueError("total_error is undefined with no valid pixels")
    a = config.alpha
    n = counts.total_valid
    return (a / (a + 1.0)) * (counts.fn / n) + (1.0 / (a + 1.0)) * (counts.fp / n)


@dataclass(frozen=True)
class MetricsReport:
    dsc: Optional[float]
    sensitivity: Optional[float]
    specificity: Optional[float]
    total_error: Optional[float]
    counts: ConfusionCounts
    per_class_accuracy: List[Optional[float]] = field(default_factory=list)

    CSV_FIELDS = ("dsc", "sensitivity", "specificity", "total_error",
                  "tp", "fp", "tn", "fn", "total_valid")

    def csv_header(self):
        cls = [f"acc_class{i}" for i in range(len(self.per_class_accuracy))]
        return ",".join(list(self.CSV_FIELDS) + cls)

    def csv_row(self):
        def fmt(v):
            return "" if v is None else f"{v:.6f}"

        c = self.counts
        vals = [fmt(self.dsc), fmt(self.sensitivity), fmt(self.specificity),
                fmt(self.total_error), str(c.tp), str(c.fp), str(c.tn),
                str(c.fn), str(c.total_valid)]
        vals += [fmt(a) for a in self.per_class_accuracy]
        return ",".join(vals)

    def table(self, class_names=None):
        """Human-readable summary; rates in percent with one decimal."""

        def pct(v):
            return "undef" if v is None else f"{100.0 * v:5.1f}%"

        lines = [f"dsc          {pct(self.dsc)}",
                 f"sensitivity  {pct(self.sensitivity)}",
                 f"specificity  {pct(self.specificity)}",
                 f"total_error  {pct(self.total_error)}"]
        names = class_names or [f"class{i}"
                                for i in range(len(self.per_class_accuracy))]
        for name, acc in zip(names, self.per_class_accuracy):
            lines.append(f"acc[{name:<12s}] {pct(acc)}")
        return "\n".join(lines)


def evaluate(model, dataset, config=MetricsConfig()):
    """Runs the model in eval mode over every sample and pools the counts.

    dataset: iterable of samples with .image (H, W, 3 floats in [0, 255]),
    .labels (H, W ints) and .valid (H, W bools).  Deterministic given the
    model and dataset; sample order does not affect the report.
    """
    from .data import image_to_input

    samples = list(dataset)
    if not samples:
        raise ValueError("cannot evaluate on an empty dataset")
    c = model.config.num_classes
    config.validate(c)

    counts = ConfusionCounts()
    class_correct = np.zeros(c, dtype=np.int64)
    class_total = np.zeros(c, dtype=np.int64)
    for s in samples:
        logits = model.forward(image_to_input(s.image)[None], mode="eval")
        pred = predict_labels(logits)[0]
        counts = accumulate(pred, PixelTargets(s.labels, s.valid),
                            config.target_class, counts)
        v = s.valid.astype(bool)
        for k in range(c):
            m = v & (s.labels == k)
            class_total[k] += int(m.sum())
            class_correct[k] += int((pred[m] == k).sum())

    per_class = [_ratio(float(class_correct[k]), int(class_total[k]))
                 for k in range(c)]
    err = None if counts.total_valid == 0 else total_error(counts, config)
    return MetricsReport(dsc(counts), sensitivity(counts), specificity(counts),
                         err, counts, per_class)
