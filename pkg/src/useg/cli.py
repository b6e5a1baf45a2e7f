"""Command-line driver: synth, train, eval, infer, gradcheck.

Configuration is a JSON document with sections model / loss / train / synth /
augment / metrics / paths.  Unknown keys anywhere are rejected; every command
echoes the fully materialized effective config (file values + flag overrides
+ defaults) before doing work.  Exit codes: 0 success, 1 numerical failure,
2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .data import (DEFAULT_CLASS_NAMES, AugmentConfig, SynthConfig,
                   build_dataset, image_to_input, load_png, read_dataset,
                   save_mask_png, save_png, write_dataset)
from .gradcheck import run_suite
from .loss import DEFAULT_CLASS_WEIGHTS, LossConfig
from .metrics import MetricsConfig, evaluate, predict_labels
from .model import (CheckpointError, UNet, UNetConfig, load_checkpoint,
                    save_checkpoint)
from .optim import AdamHyper, DivergenceError, TrainConfig, train
from .tensor import NonFiniteError, ShapeError

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2

GRADCHECK_THRESHOLD = 1e-4

OVERLAY_COLORS = {
    "coating": (25, 25, 25),
    "wet_coating": (0, 100, 0),
    "corroded": (255, 0, 0),
    "rivet": (255, 140, 0),
    "water": (0, 200, 0),
    "others": (128, 128, 128),
}


class ConfigError(ValueError):
    pass


def _coerce(value):
    if isinstance(value, list):
        return tuple(_coerce(v) for v in value)
    return value


def _build_section(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"section {where!r} must be a JSON object")
    valid = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - valid)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in section {where!r}")
    try:
        return replace(cls(), **{k: _coerce(v) for k, v in data.items()})
    except TypeError as e:
        raise ConfigError(f"bad value in section {where!r}: {e}") from e


@dataclass
class RunConfig:
    model: UNetConfig
    loss: LossConfig
    train: TrainConfig
    synth: SynthConfig
    augment: Optional[AugmentConfig]
    metrics: MetricsConfig
    paths: dict

    def effective(self):
        aug = self.augment if self.augment is not None else AugmentConfig()
        return {
            "model": asdict(self.model),
            "loss": asdict(self.loss),
            "train": {
                "batch_size": self.train.batch_size,
                "max_epochs": self.train.max_epochs,
                "early_stop_patience": self.train.early_stop_patience,
                "eval_every": self.train.eval_every,
                "seed": self.train.seed,
                "adam": asdict(self.train.adam),
            },
            "synth": asdict(self.synth),
            "augment": {"enabled": self.augment is not None, **asdict(aug)},
            "metrics": asdict(self.metrics),
            "paths": dict(self.paths),
        }


SECTION_NAMES = ("model", "loss", "train", "synth", "augment", "metrics",
                 "paths")


def load_run_config(path=None):
    raw = {}
    if path is not None:
        with open(path) as f:
            raw = json.load(f)
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
    unknown = sorted(set(raw) - set(SECTION_NAMES))
    if unknown:
        raise ConfigError(f"unknown top-level section(s) {unknown}")

    model = _build_section(UNetConfig, raw.get("model", {}), "model").validate()

    loss = _build_section(LossConfig, raw.get("loss", {}), "loss")
    if loss.weighted and loss.class_weights is None:
        loss = replace(loss, class_weights=DEFAULT_CLASS_WEIGHTS)
    loss.validate(model.num_classes)

    aug_raw = dict(raw.get("augment", {}))
    enabled = aug_raw.pop("enabled", True)
    augment_cfg = _build_section(AugmentConfig, aug_raw, "augment").validate()
    augment_opt = augment_cfg if enabled else None

    metrics = _build_section(MetricsConfig, raw.get("metrics", {}), "metrics")
    metrics.validate(model.num_classes)

    train_raw = dict(raw.get("train", {}))
    adam = _build_section(AdamHyper, train_raw.pop("adam", {}), "train.adam")
    train_cfg = _build_section(TrainConfig, train_raw, "train")
    train_cfg = replace(train_cfg, adam=adam, loss=loss, augment=augment_opt,
                        metrics=metrics).validate()

    synth = _build_section(SynthConfig, raw.get("synth", {}), "synth")
    synth.validate(model.num_classes)

    paths = raw.get("paths", {})
    if not isinstance(paths, dict) or set(paths) - {"data", "out"}:
        raise ConfigError("section 'paths' allows only 'data' and 'out'")
    return RunConfig(model, loss, train_cfg, synth, augment_opt, metrics,
                     dict(paths))


def _echo_config(rc):
    print("effective config:")
    print(json.dumps(rc.effective(), indent=2, sort_keys=True))


def _pad_to_multiple(x, multiple):
    """Edge-pads (3, H, W) so H and W divide `multiple`; returns (x, H, W)."""
    _, h, w = x.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, ph), (0, pw)), mode="edge")
    return x, h, w


# -- commands -------------------------------------------------------------


def cmd_synth(args):
    rc = load_run_config(args.config)
    if args.seed is not None:
        rc.synth = replace(rc.synth, seed=args.seed)
    _echo_config(rc)
    train_set, test_set = build_dataset(rc.synth, n_train=args.n_train,
                                        n_test=args.n_test)
    manifest = write_dataset(args.out, train_set, test_set)
    print(f"wrote {len(train_set)} train / {len(test_set)} test samples "
          f"to {args.out}")
    print(f"manifest: {manifest}")
    return EXIT_OK


def cmd_train(args):
    rc = load_run_config(args.config)
    if args.seed is not None:
        rc.train = replace(rc.train, seed=args.seed)
    if args.max_epochs is not None:
        rc.train = replace(rc.train, max_epochs=args.max_epochs)
    _echo_config(rc)
    data_dir = Path(args.data)
    if not (data_dir / "manifest.json").is_file():
        raise FileNotFoundError(f"no dataset manifest under {data_dir}")
    train_set, eval_set = read_dataset(data_dir)

    model = UNet.build(rc.model, seed=rc.train.seed)
    ckpt, history = train(model, train_set, eval_set, rc.train)
    save_checkpoint(ckpt.to_model(), args.out,
                    optimizer_state=ckpt.optimizer_state, epoch=ckpt.epoch,
                    eval_dsc=ckpt.eval_dsc)
    history_path = args.history or f"{args.out}.history.csv"
    with open(history_path, "w") as f:
        f.write(history.to_csv())
    dsc = "undefined" if ckpt.eval_dsc is None else f"{ckpt.eval_dsc:.4f}"
    print(f"best checkpoint: epoch {ckpt.epoch}, eval dsc {dsc}")
    print(f"checkpoint: {args.out}")
    print(f"history: {history_path}")
    return EXIT_OK


def cmd_eval(args):
    rc = load_run_config(args.config)
    ck = load_checkpoint(args.ckpt)
    if args.target_class is not None:
        if args.target_class not in DEFAULT_CLASS_NAMES:
            raise ConfigError(f"unknown class {args.target_class!r}; pick one "
                              f"of {DEFAULT_CLASS_NAMES}")
        rc.metrics = replace(
            rc.metrics,
            target_class=DEFAULT_CLASS_NAMES.index(args.target_class))
    if args.alpha is not None:
        rc.metrics = replace(rc.metrics, alpha=args.alpha)
    rc.metrics.validate(ck.config.num_classes)
    _echo_config(rc)

    train_set, test_set = read_dataset(args.data)
    dataset = train_set if args.split == "train" else test_set
    report = evaluate(ck.to_model(), dataset, rc.metrics)
    print(report.table(class_names=list(DEFAULT_CLASS_NAMES)))
    print(report.csv_header())
    print(report.csv_row())
    return EXIT_OK


def cmd_infer(args):
    rc = load_run_config(args.config)
    _echo_config(rc)
    ck = load_checkpoint(args.ckpt)
    model = ck.to_model()
    image = load_png(args.image)

    started = time.perf_counter()
    x = image_to_input(image)
    x, h, w = _pad_to_multiple(x, 1 << ck.config.depth)
    logits = model.forward(x[None], mode="eval")
    pred = predict_labels(logits)[0][:h, :w]
    elapsed = time.perf_counter() - started

    if args.overlay:
        colors = np.array([OVERLAY_COLORS[n] for n in DEFAULT_CLASS_NAMES],
                          dtype=np.float64)
        blend = 0.5 * image + 0.5 * colors[pred]
        save_png(args.out, blend)
    else:
        save_mask_png(args.out, pred, np.ones_like(pred, dtype=bool))
    print(f"wrote {args.out} ({h}x{w})")
    print(f"fps: {1.0 / elapsed:.2f}")
    return EXIT_OK


def cmd_gradcheck(args):
    print("effective config:")
    print(json.dumps({"seed": args.seed, "inject_bug": bool(args.inject_bug),
                      "threshold": GRADCHECK_THRESHOLD}, indent=2))
    results = run_suite(seed=args.seed, inject_bug=args.inject_bug)
    worst = 0.0
    for name, err in results:
        print(f"{name:32s} max rel err {err:.3e}")
        worst = max(worst, err)
    ok = worst < GRADCHECK_THRESHOLD
    print(f"gradcheck {'PASS' if ok else 'FAIL'} "
          f"(worst {worst:.3e}, threshold {GRADCHECK_THRESHOLD:.0e})")
    return EXIT_OK if ok else EXIT_NUMERICAL


def build_parser():
    p = argparse.ArgumentParser(
        prog="useg",
        description="Small U-Net segmentation pipeline for imbalanced "
                    "inspection imagery.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--config", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--n-train", type=int, default=38)
    sp.add_argument("--n-test", type=int, default=32)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_synth)

    tp = sub.add_parser("train", help="train a model on a dataset directory")
    tp.add_argument("--config", default=None)
    tp.add_argument("--data", required=True)
    tp.add_argument("--out", required=True)
    tp.add_argument("--history", default=None)
    tp.add_argument("--seed", type=int, default=None)
    tp.add_argument("--max-epochs", type=int, default=None)
    tp.set_defaults(func=cmd_train)

    ep = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    ep.add_argument("--config", default=None)
    ep.add_argument("--ckpt", required=True)
    ep.add_argument("--data", required=True)
    ep.add_argument("--split", choices=("train", "test"), default="test")
    ep.add_argument("--class", dest="target_class", default=None)
    ep.add_argument("--alpha", type=float, default=None)
    ep.set_defaults(func=cmd_eval)

    ip = sub.add_parser("infer", help="segment one image with a checkpoint")
    ip.add_argument("--config", default=None)
    ip.add_argument("--ckpt", required=True)
    ip.add_argument("--image", required=True)
    ip.add_argument("--out", required=True)
    ip.add_argument("--overlay", action="store_true")
    ip.set_defaults(func=cmd_infer)

    gp = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    gp.add_argument("--seed", type=int, default=0)
    gp.add_argument("--inject-bug", action="store_true",
                    help="self-test: corrupt one gradient and expect FAIL")
    gp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DivergenceError, NonFiniteError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, CheckpointError, ShapeError, ValueError,
            OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
