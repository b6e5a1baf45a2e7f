"""Adam, the mini-batch training loop, and multi-variant comparison runs.

Training shuffles the train set each epoch from a seeded generator, applies
per-sample augmentation draws keyed by (epoch, sample index), and early-stops
on the evaluation-set DSC of the target class.  Everything is deterministic
given the config seed; no global RNG state is used.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .data import AugmentConfig, augment, image_to_input
from .loss import LossConfig, PixelTargets, compute_loss
from .metrics import MetricsConfig, evaluate
from .model import Checkpoint, UNet
from .tensor import NonFiniteError


class DivergenceError(ArithmeticError):
    """Non-finite loss or gradient; carries where training fell over."""

    def __init__(self, epoch, batch, detail):
        super().__init__(f"training diverged at epoch {epoch}, batch {batch}: "
                         f"{detail}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self):
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("beta1/beta2 must be in [0, 1)")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        return self


@dataclass
class AdamState:
    m: dict
    v: dict

    @staticmethod
    def initial(params):
        return AdamState({k: np.zeros_like(p) for k, p in params.items()},
                         {k: np.zeros_like(p) for k, p in params.items()})

    def copy(self):
        return AdamState({k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()})

    def to_records(self, t):
        out = {f"m.{k}": a for k, a in self.m.items()}
        out.update({f"v.{k}": a for k, a in self.v.items()})
        out["t"] = np.array([float(t)])
        return out


def adam_step(params, grads, state, hyper=AdamHyper(), t=1):
    """One bias-corrected Adam descent step, in place.

    Returns (params, state) for chaining; both are the mutated inputs.
    """
    hyper.validate()
    if t < 1:
        raise ValueError(f"step index t must be >= 1, got {t}")
    if set(grads) != set(params):
        raise ValueError("grads do not cover the parameter set")
    bc1 = 1.0 - hyper.beta1 ** t
    bc2 = 1.0 - hyper.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.shape} "
                             f"for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * g * g
        p -= hyper.lr * (m / bc1) / (np.sqrt(v / bc2) + hyper.eps)
    return params, state


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 2
    max_epochs: int = 1800
    early_stop_patience: int = 15
    eval_every: int = 10
    loss: LossConfig = LossConfig(kind="sce")
    seed: int = 0
    adam: AdamHyper = AdamHyper()
    augment: Optional[AugmentConfig] = None
    metrics: MetricsConfig = MetricsConfig()

    def validate(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        self.adam.validate()
        if self.augment is not None:
            self.augment.validate()
        return self


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    eval_dsc: Optional[float] = None
    eval_sensitivity: Optional[float] = None
    eval_specificity: Optional[float] = None
    eval_total_error: Optional[float] = None
    seconds: float = 0.0


@dataclass
class TrainHistory:
    records: List[EpochRecord] = field(default_factory=list)

    def best_eval_dsc(self):
        scores = [r.eval_dsc for r in self.records if r.eval_dsc is not None]
        return max(scores) if scores else None

    def to_csv(self, include_timing=False):
        """CSV serialization.  Wall time is opt-in so that identical runs
        serialize identically."""

        def fmt(v):
            return "" if v is None else f"{v:.6f}"

        header = ("epoch,train_loss,eval_dsc,eval_sensitivity,"
                  "eval_specificity,eval_total_error")
        lines = [header + ",seconds" if include_timing else header]
        for r in self.records:
            cells = [str(r.epoch), fmt(r.train_loss), fmt(r.eval_dsc),
                     fmt(r.eval_sensitivity), fmt(r.eval_specificity),
                     fmt(r.eval_total_error)]
            if include_timing:
                cells.append(f"{r.seconds:.3f}")
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def _batch_arrays(samples, config, epoch, indices):
    xs, labels, valids = [], [], []
    for i in indices:
        s = samples[i]
        if config.augment is not None:
            s = augment(s, config.augment, draw=epoch * len(samples) + i)
        xs.append(image_to_input(s.image))
        labels.append(s.labels)
        valids.append(s.valid)
    return np.stack(xs), np.stack(labels), np.stack(valids)


def train(model, train_set, eval_set, config):
    """Trains in place; returns (best Checkpoint by eval DSC, TrainHistory).

    Early stopping: once the eval DSC has failed to improve for
    early_stop_patience consecutive evaluations, training stops.  If no
    evaluation ever produced a defined DSC, the final state is returned.
    """
    config.validate()
    train_set = list(train_set)
    eval_set = list(eval_set)
    if not train_set or not eval_set:
        raise ValueError("train and eval sets must be non-empty")

    params = model.params
    state = AdamState.initial(params)
    t = 0
    history = TrainHistory()
    best = None  # (dsc, epoch, params, stats, state, t)
    evals_since_best = 0
    n = len(train_set)

    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        order = np.random.default_rng(
            np.random.SeedSequence((config.seed, 7, epoch))).permutation(n)
        batch_losses = []
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            try:
                x, labels, valid = _batch_arrays(train_set, config, epoch, idx)
                logits = model.forward(x, mode="train")
                loss, grad = compute_loss(logits, PixelTargets(labels, valid),
                                          config.loss)
                if not math.isfinite(loss):
                    raise NonFiniteError(f"loss is {loss}")
                grads = model.backward(grad)
                t += 1
                adam_step(params, grads, state, config.adam, t)
            except NonFiniteError as e:
                raise DivergenceError(epoch, b, str(e)) from e
            batch_losses.append(loss)

        record = EpochRecord(epoch, float(np.mean(batch_losses)))
        if epoch % config.eval_every == 0 or epoch == config.max_epochs:
            try:
                report = evaluate(model, eval_set, config.metrics)
            except NonFiniteError as e:
                raise DivergenceError(epoch, b, f"(during evaluation) {e}") from e
            record.eval_dsc = report.dsc
            record.eval_sensitivity = report.sensitivity
            record.eval_specificity = report.specificity
            record.eval_total_error = report.total_error
            if report.dsc is not None and \
                    (best is None or report.dsc > best[0]):
                p, s = model.copy_state()
                best = (report.dsc, epoch, p, s, state.copy(), t)
                evals_since_best = 0
            else:
                evals_since_best += 1
            record.seconds = time.perf_counter() - started
            history.records.append(record)
            if evals_since_best >= config.early_stop_patience:
                break
        else:
            record.seconds = time.perf_counter() - started
            history.records.append(record)

    if best is None:
        p, s = model.copy_state()
        best = (None, history.records[-1].epoch, p, s, state.copy(), t)
    best_dsc, best_epoch, p, s, st, bt = best
    ckpt = Checkpoint(model.config, p, s, st.to_records(bt), best_epoch,
                      best_dsc)
    return ckpt, history


def variant_name(loss_cfg):
    base = loss_cfg.kind
    if loss_cfg.kind in ("focal", "w_focal"):
        g = loss_cfg.gamma
        base += f"(g={g:g})"
    return base


def weight_sweep_configs(base, class_idx, multipliers=(0.25, 1.0, 4.0, 8.0)):
    """Variants of `base` that scale one class's weight by each multiplier."""
    if base.class_weights is None:
        raise ValueError("weight sweep needs a weighted base config")
    out = []
    for mult in multipliers:
        w = list(float(v) for v in base.class_weights)
        w[class_idx] = w[class_idx] * mult
        name = f"{base.kind}[w{class_idx}={w[class_idx]:g}]"
        out.append((name, replace(base, class_weights=tuple(w))))
    return out


@dataclass
class ComparisonRow:
    name: str
    dsc: Optional[float]
    sensitivity: Optional[float]
    specificity: Optional[float]
    total_error: Optional[float]


@dataclass
class ComparisonTable:
    rows: List[ComparisonRow] = field(default_factory=list)

    def to_csv(self):
        def fmt(v):
            return "" if v is None else f"{v:.6f}"

        lines = ["variant,dsc,sensitivity,specificity,total_error"]
        for r in self.rows:
            lines.append(",".join([r.name, fmt(r.dsc), fmt(r.sensitivity),
                                   fmt(r.specificity), fmt(r.total_error)]))
        return "\n".join(lines) + "\n"

    def to_text(self):
        def pct(v):
            return "  undef" if v is None else f"{100.0 * v:6.1f}%"

        width = max([len(r.name) for r in self.rows] + [7])
        lines = [f"{'variant':<{width}}  {'dsc':>7} {'sens':>7} {'spec':>7} "
                 f"{'toterr':>7}"]
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {pct(r.dsc)} {pct(r.sensitivity)} "
                         f"{pct(r.specificity)} {pct(r.total_error)}")
        return "\n".join(lines) + "\n"


def run_variant_suite(model_config, train_set, eval_set, base_config, variants,
                      names=None):
    """Trains one model per loss variant from identical seeds and data and
    reports the best checkpoint's eval metrics per variant."""
    variants = list(variants)
    if not variants:
        raise ValueError("need at least one variant")
    if names is None:
        names = [variant_name(v) for v in variants]
    table = ComparisonTable()
    for name, loss_cfg in zip(names, variants):
        net = UNet.build(model_config, seed=base_config.seed)
        cfg = replace(base_config, loss=loss_cfg)
        ckpt, _ = train(net, train_set, eval_set, cfg)
        report = evaluate(ckpt.to_model(), eval_set, base_config.metrics)
        table.rows.append(ComparisonRow(name, report.dsc, report.sensitivity,
                                        report.specificity,
                                        report.total_error))
    return table
