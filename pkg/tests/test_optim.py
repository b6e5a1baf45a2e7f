import numpy as np
import pytest

from useg.data import AugmentConfig, SynthConfig, build_dataset
from useg.loss import LossConfig
from useg.model import UNet, UNetConfig
from useg.optim import (AdamHyper, AdamState, ComparisonRow, ComparisonTable,
                        DivergenceError, TrainConfig, adam_step, train,
                        run_variant_suite, weight_sweep_configs)

TINY_MODEL = UNetConfig(in_channels=3, num_classes=6, base_features=2, depth=2)
TINY_SCENE = SynthConfig(image_size=(16, 16), seed=0)


def tiny_sets(n_train=4, n_test=2, seed=0):
    return build_dataset(SynthConfig(image_size=(16, 16), seed=seed),
                         n_train=n_train, n_test=n_test)


def tiny_config(**kw):
    base = dict(batch_size=2, max_epochs=3, early_stop_patience=10,
                eval_every=1, loss=LossConfig(kind="sce"), seed=1)
    base.update(kw)
    return TrainConfig(**base)


class TestAdamStep:
    def test_worked_single_step(self):
        params = {"p": np.array([0.0])}
        state = AdamState.initial(params)
        adam_step(params, {"p": np.array([1.0])}, state, AdamHyper(), t=1)
        assert state.m["p"][0] == pytest.approx(0.1, rel=1e-12)
        assert state.v["p"][0] == pytest.approx(0.001, rel=1e-12)
        assert params["p"][0] == pytest.approx(-1e-3, abs=1e-9)

    def test_zero_grad_leaves_param_unchanged(self, rng):
        p0 = rng.normal(size=(3, 4))
        params = {"p": p0.copy()}
        state = AdamState.initial(params)
        adam_step(params, {"p": np.zeros((3, 4))}, state, AdamHyper(), t=1)
        assert np.array_equal(params["p"], p0)

    def test_update_opposes_gradient(self, rng):
        params = {"p": rng.normal(size=10)}
        before = params["p"].copy()
        g = rng.uniform(0.1, 2.0, size=10)  # strictly positive
        adam_step(params, {"p": g}, AdamState.initial(params), AdamHyper(), t=1)
        assert np.all(params["p"] < before)

    def test_bias_correction_magnitude(self, rng):
        # at t=1 the corrected step is ~lr regardless of grad scale
        for scale in (1e-3, 1.0, 1e3):
            params = {"p": np.zeros(1)}
            adam_step(params, {"p": np.full(1, scale)},
                      AdamState.initial(params), AdamHyper(lr=0.01), t=1)
            assert params["p"][0] == pytest.approx(-0.01, rel=1e-4)

    def test_shape_mismatch(self, rng):
        params = {"p": np.zeros((2, 2))}
        with pytest.raises(ValueError, match="shape"):
            adam_step(params, {"p": np.zeros(3)}, AdamState.initial(params))
        with pytest.raises(ValueError, match="cover"):
            adam_step(params, {"q": np.zeros((2, 2))}, AdamState.initial(params))

    def test_bad_hyper_and_t(self):
        with pytest.raises(ValueError):
            AdamHyper(lr=-1.0).validate()
        with pytest.raises(ValueError):
            AdamHyper(beta1=1.0).validate()
        params = {"p": np.zeros(1)}
        with pytest.raises(ValueError, match="t"):
            adam_step(params, {"p": np.zeros(1)}, AdamState.initial(params), t=0)


class TestTrainLoop:
    def test_zero_lr_freezes_parameters(self):
        train_set, eval_set = tiny_sets()
        net = UNet.build(TINY_MODEL, seed=2)
        before = {k: v.copy() for k, v in net.params.items()}
        cfg = tiny_config(adam=AdamHyper(lr=0.0), max_epochs=3)
        train(net, train_set, eval_set, cfg)
        for k in before:
            assert np.array_equal(net.params[k], before[k]), k

    def test_early_stop_after_patience_plus_one_evals(self):
        train_set, eval_set = tiny_sets()
        net = UNet.build(TINY_MODEL, seed=2)
        # pin the prediction to class 0 so the eval DSC cannot move
        net.params["head.bias"][0] = 50.0
        cfg = tiny_config(adam=AdamHyper(lr=0.0), max_epochs=50,
                          early_stop_patience=3, eval_every=1)
        _, history = train(net, train_set, eval_set, cfg)
        evals = [r for r in history.records if r.eval_dsc is not None]
        assert [r.eval_dsc for r in evals] == [0.0] * len(evals)
        assert len(evals) == 4  # first sets the best, then patience misses
        assert history.records[-1].epoch == 4

    def test_best_checkpoint_matches_history_max(self):
        train_set, eval_set = tiny_sets()
        net = UNet.build(TINY_MODEL, seed=3)
        ckpt, history = train(net, train_set, eval_set,
                              tiny_config(max_epochs=4))
        assert ckpt.eval_dsc == history.best_eval_dsc()

    def test_descent_on_tiny_set(self):
        train_set, _ = tiny_sets(n_train=4)
        net = UNet.build(TINY_MODEL, seed=4)
        cfg = tiny_config(max_epochs=25, eval_every=25,
                          loss=LossConfig(kind="sce"))
        _, history = train(net, train_set, train_set, cfg)  # 2 steps/epoch
        first = history.records[0].train_loss
        smoothed_last = np.mean([r.train_loss for r in history.records[-5:]])
        assert smoothed_last < first

    def test_bitwise_reproducible(self):
        train_set, eval_set = tiny_sets()
        runs = []
        for _ in range(2):
            net = UNet.build(TINY_MODEL, seed=5)
            ckpt, history = train(net, train_set, eval_set,
                                  tiny_config(max_epochs=3,
                                              augment=AugmentConfig(seed=9)))
            runs.append((ckpt, history))
        a, b = runs
        for k in a[0].params:
            assert np.array_equal(a[0].params[k], b[0].params[k]), k
        for k in a[0].stats:
            assert np.array_equal(a[0].stats[k], b[0].stats[k]), k
        assert a[1].to_csv() == b[1].to_csv()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reports_epoch_and_batch(self):
        train_set, eval_set = tiny_sets()
        net = UNet.build(TINY_MODEL, seed=6)
        cfg = tiny_config(adam=AdamHyper(lr=1e18), max_epochs=5)
        with pytest.raises(DivergenceError, match=r"epoch \d+, batch \d+"):
            train(net, train_set, eval_set, cfg)

    def test_empty_sets_rejected(self):
        net = UNet.build(TINY_MODEL, seed=1)
        with pytest.raises(ValueError, match="non-empty"):
            train(net, [], [], tiny_config())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0).validate()
        with pytest.raises(ValueError):
            TrainConfig(eval_every=0).validate()
        with pytest.raises(ValueError):
            TrainConfig(early_stop_patience=0).validate()

    def test_history_csv_shape(self):
        train_set, eval_set = tiny_sets()
        net = UNet.build(TINY_MODEL, seed=7)
        _, history = train(net, train_set, eval_set,
                           tiny_config(max_epochs=2, eval_every=2))
        csv = history.to_csv()
        lines = csv.strip().split("\n")
        assert lines[0].startswith("epoch,train_loss,eval_dsc")
        assert "seconds" not in lines[0]
        assert len(lines) == 3
        timed = history.to_csv(include_timing=True)
        assert timed.strip().split("\n")[0].endswith(",seconds")


class TestVariantSuite:
    def test_rows_and_determinism(self):
        train_set, eval_set = tiny_sets()
        variants = [LossConfig(kind="sce"),
                    LossConfig(kind="focal", gamma=2.0)]
        base = tiny_config(max_epochs=2, eval_every=2)
        t1 = run_variant_suite(TINY_MODEL, train_set, eval_set, base, variants)
        t2 = run_variant_suite(TINY_MODEL, train_set, eval_set, base, variants)
        assert [r.name for r in t1.rows] == ["sce", "focal(g=2)"]
        assert t1.to_csv() == t2.to_csv()

    def test_empty_variants_rejected(self):
        with pytest.raises(ValueError):
            run_variant_suite(TINY_MODEL, [1], [1], tiny_config(), [])

    def test_weight_sweep_configs(self):
        base = LossConfig(kind="w_sce",
                          class_weights=(1, 1, 10, 5, 1, 1))
        sweeps = weight_sweep_configs(base, class_idx=2)
        assert [cfg.class_weights[2] for _, cfg in sweeps] == [2.5, 10, 40, 80]
        assert all(cfg.class_weights[3] == 5 for _, cfg in sweeps)
        assert [name for name, _ in sweeps] == [
            "w_sce[w2=2.5]", "w_sce[w2=10]", "w_sce[w2=40]", "w_sce[w2=80]"]

    def test_weight_sweep_requires_weights(self):
        with pytest.raises(ValueError):
            weight_sweep_configs(LossConfig(kind="sce"), 2)

    def test_table_text_format(self):
        table = ComparisonTable([ComparisonRow("sce", 0.559, 0.675, 0.973,
                                               0.029),
                                 ComparisonRow("w_sce", None, 0.752, 0.970,
                                               0.025)])
        text = table.to_text()
        assert "67.5%" in text and "97.3%" in text
        assert "undef" in text
        csv = table.to_csv()
        assert csv.splitlines()[0] == "variant,dsc,sensitivity,specificity,total_error"
        assert len(csv.strip().splitlines()) == 3
