import numpy as np
import pytest

from useg.data import SynthConfig, generate_scene
from useg.loss import PixelTargets
from useg.metrics import (ConfusionCounts, MetricsConfig, accumulate, dsc,
                          evaluate, predict_labels, sensitivity, specificity,
                          total_error)
from useg.model import UNet, UNetConfig
from useg.tensor import ShapeError


def brute_force_counts(pred, labels, valid, target):
    tp = fp = tn = fn = 0
    for y in range(labels.shape[0]):
        for x in range(labels.shape[1]):
            if not valid[y, x]:
                continue
            p = pred[y, x] == target
            t = labels[y, x] == target
            if p and t:
                tp += 1
            elif p and not t:
                fp += 1
            elif not p and t:
                fn += 1
            else:
                tn += 1
    return ConfusionCounts(tp, fp, tn, fn)


class TestAccumulate:
    def test_random_case_matches_brute_force(self, rng):
        for _ in range(5):
            pred = rng.integers(0, 4, size=(9, 7))
            labels = rng.integers(0, 4, size=(9, 7))
            valid = rng.random((9, 7)) > 0.3
            got = accumulate(pred, PixelTargets(labels, valid), target_class=2)
            assert got == brute_force_counts(pred, labels, valid, 2)

    def test_perfect_prediction(self, rng):
        labels = rng.integers(0, 3, size=(8, 8))
        valid = rng.random((8, 8)) > 0.2
        k = int(((labels == 1) & valid).sum())
        n = int(valid.sum())
        got = accumulate(labels, PixelTargets(labels, valid), target_class=1)
        assert got == ConfusionCounts(tp=k, fp=0, tn=n - k, fn=0)

    def test_complement_prediction_binary(self, rng):
        labels = rng.integers(0, 2, size=(6, 6))
        valid = np.ones((6, 6), dtype=bool)
        got = accumulate(1 - labels, PixelTargets(labels, valid), target_class=1)
        assert got.tp == 0 and got.tn == 0
        assert got.fp + got.fn == 36

    def test_counts_partition_valid_pixels(self, rng):
        pred = rng.integers(0, 5, size=(10, 10))
        labels = rng.integers(0, 5, size=(10, 10))
        valid = rng.random((10, 10)) > 0.4
        got = accumulate(pred, PixelTargets(labels, valid), target_class=0)
        assert got.total_valid == int(valid.sum())

    def test_accumulation_merges(self, rng):
        a = accumulate(rng.integers(0, 3, (4, 4)),
                       PixelTargets(rng.integers(0, 3, (4, 4)),
                                    np.ones((4, 4), bool)), 1)
        b = accumulate(rng.integers(0, 3, (4, 4)),
                       PixelTargets(rng.integers(0, 3, (4, 4)),
                                    np.ones((4, 4), bool)), 1, counts=a)
        assert b.total_valid == 32
        assert a.total_valid == 16  # input not mutated

    def test_merge_commutes_and_associates(self):
        a = ConfusionCounts(1, 2, 3, 4)
        b = ConfusionCounts(5, 6, 7, 8)
        c = ConfusionCounts(9, 1, 0, 2)
        assert a + b == b + a
        assert (a + b) + c == a + (b + c)

    def test_dim_mismatch(self, rng):
        with pytest.raises(ShapeError):
            accumulate(np.zeros((3, 3), int),
                       PixelTargets(np.zeros((4, 4), int),
                                    np.ones((4, 4), bool)), 0)


class TestMetricValues:
    def test_dsc_example(self):
        assert dsc(ConfusionCounts(tp=2, fp=1, tn=0, fn=1)) == pytest.approx(4 / 6)

    def test_sensitivity_example(self):
        assert sensitivity(ConfusionCounts(tp=3, fp=0, tn=0, fn=1)) == 0.75

    def test_specificity_example(self):
        assert specificity(ConfusionCounts(tp=0, fp=3, tn=97, fn=0)) == 0.97

    def test_undefined_metrics_are_none(self):
        empty_target = ConfusionCounts(tp=0, fp=0, tn=10, fn=0)
        assert dsc(empty_target) is None
        assert sensitivity(empty_target) is None
        assert specificity(ConfusionCounts(tp=4, fp=0, tn=0, fn=0)) is None

    def test_total_error_example(self):
        c = ConfusionCounts(tp=0, fp=8, tn=962, fn=30)
        assert c.total_valid == 1000
        got = total_error(c, MetricsConfig(target_class=0, alpha=10.0))
        assert got == pytest.approx((10 / 11) * 0.030 + (1 / 11) * 0.008)
        assert got == pytest.approx(0.0280, abs=5e-5)

    def test_total_error_zero_when_perfect(self):
        assert total_error(ConfusionCounts(tp=5, fp=0, tn=95, fn=0)) == 0.0

    def test_total_error_alpha_one_symmetric(self):
        c = ConfusionCounts(tp=10, fp=7, tn=76, fn=7)
        got = total_error(c, MetricsConfig(target_class=0, alpha=1.0))
        assert got == pytest.approx(7 / 100)

    def test_total_error_requires_valid_pixels(self):
        with pytest.raises(ValueError):
            total_error(ConfusionCounts())

    def test_f1_identity(self, rng):
        for _ in range(10):
            tp, fp, tn, fn = [int(v) for v in rng.integers(1, 50, size=4)]
            c = ConfusionCounts(tp, fp, tn, fn)
            precision = tp / (tp + fp)
            recall = sensitivity(c)
            f1 = 2 * precision * recall / (precision + recall)
            assert dsc(c) == pytest.approx(f1, rel=1e-12)

    def test_ranges(self, rng):
        for _ in range(20):
            tp, fp, tn, fn = [int(v) for v in rng.integers(0, 30, size=4)]
            c = ConfusionCounts(tp, fp, tn, fn)
            for v in (dsc(c), sensitivity(c), specificity(c)):
                assert v is None or 0.0 <= v <= 1.0
            if c.total_valid:
                assert 0.0 <= total_error(c) <= 1.0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            MetricsConfig(target_class=6).validate(6)
        with pytest.raises(ValueError):
            MetricsConfig(alpha=0.0).validate(6)


class TestPredictLabels:
    def test_argmax_and_shift_invariance(self, rng):
        logits = rng.normal(size=(2, 5, 6, 6))
        pred = predict_labels(logits)
        assert pred.shape == (2, 6, 6)
        shift = rng.normal(size=(2, 1, 6, 6))
        assert np.array_equal(pred, predict_labels(logits + shift))


class _OracleModel:
    """Duck-typed stand-in whose prediction is a fixed function of the image."""

    def __init__(self, num_classes, rule):
        self.config = UNetConfig(num_classes=num_classes)
        self._rule = rule

    def forward(self, batch, mode="eval"):
        labels = self._rule(batch)  # (B, H, W)
        b, h, w = labels.shape
        logits = np.zeros((b, self.config.num_classes, h, w))
        np.put_along_axis(logits, labels[:, None], 10.0, axis=1)
        return logits


def _threshold_rule(batch):
    return (batch[:, 0] > 0.5).astype(np.int64) * 2


class TestEvaluate:
    def _dataset(self, rng, n=3):
        samples = []
        for _ in range(n):
            img = np.rint(rng.uniform(0, 255, size=(16, 16, 3)))
            labels = _threshold_rule(img.transpose(2, 0, 1)[None] / 255.0)[0]
            valid = rng.random((16, 16)) > 0.1
            samples.append(type("S", (), {"image": img, "labels": labels,
                                          "valid": valid})())
        return samples

    def test_perfect_model_scores_perfectly(self, rng):
        ds = self._dataset(rng)
        report = evaluate(_OracleModel(6, _threshold_rule), ds,
                          MetricsConfig(target_class=2))
        assert report.dsc == 1.0
        assert report.sensitivity == 1.0
        assert report.specificity == 1.0
        assert report.total_error == 0.0
        for acc, total in zip(report.per_class_accuracy, [1.0, None, 1.0]):
            assert acc == total or (acc is None and total is None)

    def test_never_target_model(self, rng):
        ds = self._dataset(rng)
        rule = lambda batch: np.zeros(batch[:, 0].shape, dtype=np.int64)
        report = evaluate(_OracleModel(6, rule), ds, MetricsConfig(target_class=2))
        assert report.sensitivity == 0.0
        assert report.specificity == 1.0
        assert report.counts.tp == 0 and report.counts.fp == 0

    def test_totals_equal_per_image_accumulation(self, rng):
        ds = self._dataset(rng, n=4)
        model = _OracleModel(6, lambda b: (b[:, 1] > 0.5).astype(np.int64) * 2)
        report = evaluate(model, ds, MetricsConfig(target_class=2))
        counts = ConfusionCounts()
        for s in ds:
            pred = predict_labels(model.forward(
                s.image.transpose(2, 0, 1)[None] / 255.0))[0]
            counts = accumulate(pred, PixelTargets(s.labels, s.valid), 2, counts)
        assert report.counts == counts

    def test_order_invariance(self, rng):
        ds = self._dataset(rng, n=4)
        model = _OracleModel(6, _threshold_rule)
        a = evaluate(model, ds, MetricsConfig(target_class=2))
        b = evaluate(model, list(reversed(ds)), MetricsConfig(target_class=2))
        assert a == b

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            evaluate(_OracleModel(6, _threshold_rule), [])

    def test_real_model_deterministic(self, rng):
        cfg = UNetConfig(in_channels=3, num_classes=6, base_features=2, depth=2)
        net = UNet.build(cfg, seed=1)
        net.forward(rng.normal(size=(2, 3, 16, 16)), mode="train")
        ds = [generate_scene(SynthConfig(image_size=(16, 16), seed=s))
              for s in range(2)]
        a = evaluate(net, ds)
        b = evaluate(net, ds)
        assert a == b
        assert a.counts.total_valid == sum(int(s.valid.sum()) for s in ds)

    def test_report_csv_and_table(self, rng):
        ds = self._dataset(rng)
        report = evaluate(_OracleModel(6, _threshold_rule), ds,
                          MetricsConfig(target_class=2))
        header = report.csv_header()
        row = report.csv_row()
        assert len(header.split(",")) == len(row.split(","))
        assert "dsc" in header and "total_valid" in header
        assert row.split(",")[0] == "1.000000"
        table = report.table(class_names=["a", "b", "c", "d", "e", "f"])
        assert "100.0%" in table
        assert "undef" in table  # classes absent from the tiny dataset
        assert "acc[a" in table
