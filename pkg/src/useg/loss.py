"""Per-pixel classification losses over softmax outputs.

Four variants share one code path: plain cross entropy, class-weighted cross
entropy, focal loss, and class-weighted focal loss.  Each pixel n with true
class t contributes

    -w_t * (1 - p_t)^gamma * log(p_t)

where w_t is 1 for the unweighted kinds and gamma is 0 for the non-focal
kinds, so focal with gamma = 0 reproduces cross entropy bit for bit.  The
loss is the mean over the valid pixels of the batch; pixels flagged invalid
(occluded or unlabeled) contribute nothing to the value or the gradient.

The true-class probability is clamped to [CLAMP_EPS, 1 - CLAMP_EPS] before
the log and the focal factor, and the analytic gradient carries the clamp's
zero-slope region, so finite differences agree everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .tensor import ShapeError, ensure_finite, softmax_channels

CLAMP_EPS = 1e-7

LOSS_KINDS = ("sce", "w_sce", "focal", "w_focal")

# Inspection default: corroded steel is the rare class that matters most,
# rivets come second, the broad background classes stay at 1.
# Order: coating, wet_coating, corroded, rivet, water, others.
DEFAULT_CLASS_WEIGHTS = (1.0, 1.0, 10.0, 5.0, 1.0, 1.0)


@dataclass(frozen=True)
class LossConfig:
    kind: str = "sce"
    gamma: float = 0.0
    class_weights: Optional[Sequence[float]] = None
    normalize_weights: bool = False

    def validate(self, num_classes):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of "
                             f"{LOSS_KINDS}")
        if self.gamma < 0.0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not self.weighted:
            return self
        if self.class_weights is None:
            raise ValueError(f"loss kind {self.kind!r} requires class_weights")
        w = np.asarray(self.class_weights, dtype=np.float64)
        if w.shape != (num_classes,):
            raise ValueError(f"class_weights must have length {num_classes}, "
                             f"got shape {w.shape}")
        if not np.all(w > 0.0):
            raise ValueError("class_weights must all be positive")
        return self

    @property
    def weighted(self):
        return self.kind in ("w_sce", "w_focal")

    @property
    def effective_gamma(self):
        return self.gamma if self.kind in ("focal", "w_focal") else 0.0

    def resolved_weights(self, num_classes):
        """Per-class weight vector actually applied (ones when unweighted)."""
        if not self.weighted:
            return np.ones(num_classes)
        w = np.asarray(self.class_weights, dtype=np.float64).copy()
        if self.normalize_weights:
            w /= w.min()
        return w


@dataclass(frozen=True)
class PixelTargets:
    """Integer labels plus a validity mask of the same (B, H, W) dims."""

    labels: np.ndarray
    valid: np.ndarray


def compute_loss(logits, targets, config):
    """Returns (loss, grad_logits).

    loss: mean per-pixel term over valid pixels.  grad_logits: analytic
    d loss / d logits, exactly zero at invalid pixels.
    """
    labels, valid = targets.labels, targets.valid
    if logits.ndim != 4:
        raise ShapeError(f"logits must be (B, C, H, W), got {logits.shape}")
    b, c, h, w = logits.shape
    config.validate(c)
    if labels.shape != (b, h, w) or valid.shape != (b, h, w):
        raise ShapeError(f"targets dims {labels.shape}/{valid.shape} do not match "
                         f"logits {(b, h, w)}")
    valid = valid.astype(bool)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("no valid pixels in batch")
    if labels[valid].size and (labels[valid].min() < 0 or labels[valid].max() >= c):
        raise ValueError(f"label out of range 0..{c - 1}")

    gamma = config.effective_gamma
    weights = config.resolved_weights(c)

    probs = softmax_channels(logits)
    idx = labels[:, None].astype(np.intp).clip(0, c - 1)
    p_raw = np.take_along_axis(probs, idx, axis=1)[:, 0]
    p = np.clip(p_raw, CLAMP_EPS, 1.0 - CLAMP_EPS)
    logp = np.log(p)
    one_minus = 1.0 - p
    w_pix = weights[labels.clip(0, c - 1)]

    per_pixel = -w_pix * one_minus**gamma * logp
    loss = float(per_pixel[valid].sum() / n_valid)

    # d per_pixel / d p; gamma * x**(gamma-1) is exactly 0 when gamma == 0
    dp = w_pix * (gamma * one_minus**(gamma - 1.0) * logp - one_minus**gamma / p)
    unclamped = (p_raw > CLAMP_EPS) & (p_raw < 1.0 - CLAMP_EPS)
    s = np.where(valid & unclamped, dp, 0.0) / n_valid

    a = s * p_raw
    grad = -a[:, None] * probs
    np.put_along_axis(grad, idx, np.take_along_axis(grad, idx, axis=1) + a[:, None],
                      axis=1)
    ensure_finite("compute_loss", grad)
    return loss, grad


def class_weights_from_frequencies(label_histogram, floor=1e-3):
    """Inverse-frequency class weights, rescaled so the smallest weight is 1.

    label_histogram: length-C pixel counts (any nonnegative reals).  Each
    frequency is floored at `floor` so absent classes get a large but finite
    weight.
    """
    hist = np.asarray(label_histogram, dtype=np.float64)
    if hist.ndim != 1 or hist.size == 0:
        raise ValueError("label_histogram must be a nonempty 1-D array")
    if np.any(hist < 0):
        raise ValueError("label_histogram counts must be nonnegative")
    total = hist.sum()
    if total == 0:
        raise ValueError("label_histogram is all zeros")
    if floor <= 0:
        raise ValueError(f"floor must be positive, got {floor}")
    freq = np.maximum(hist / total, floor)
    weights = 1.0 / freq
    return weights / weights.min()
