import math

import numpy as np
import pytest

from kpbench import dataset as D
from kpbench import evaluation as E
from kpbench import models as M
from kpbench import tensor as T
from kpbench import training as TR
from conftest import rel_error


def tiny_spec():
    return M.custom_cnn_spec("tiny", (4, 8))


@pytest.fixture(scope="module")
def tiny_data():
    return D.synthesize_dataset(24, seed=11)


class TestMseLoss:
    def test_zero(self):
        y = np.ones((2, 30))
        assert TR.mse_loss(y, y, np.ones_like(y))[0] == 0.0

    def test_hand_value(self):
        loss, grad = TR.mse_loss(np.array([[3.0, 4.0]]), np.zeros((1, 2)), np.ones((1, 2)))
        assert loss == 12.5
        np.testing.assert_array_equal(grad, [[3.0, 4.0]])

    def test_mask(self):
        loss, grad = TR.mse_loss(np.array([[3.0, 4.0]]), np.zeros((1, 2)), np.array([[1.0, 0.0]]))
        assert loss == 9.0
        assert grad[0, 1] == 0.0

    def test_nan_target_under_mask(self):
        loss, _ = TR.mse_loss(np.array([[3.0, 4.0]]), np.array([[0.0, np.nan]]), np.array([[1.0, 0.0]]))
        assert loss == 9.0

    def test_empty_mask(self):
        with pytest.raises(ValueError, match="no supervised"):
            TR.mse_loss(np.ones((1, 2)), np.zeros((1, 2)), np.zeros((1, 2)))

    @pytest.mark.parametrize("i", range(20))
    def test_gradient(self, i):
        rng = np.random.default_rng([42, i])
        pred, target = rng.standard_normal((4, 30)), rng.standard_normal((4, 30))
        mask = (rng.random((4, 30)) < 0.7).astype(np.float64)
        mask[0, 0] = 1.0
        _, grad = TR.mse_loss(pred, target, mask)
        numeric = T.finite_difference_grad(lambda p: TR.mse_loss(p, target, mask)[0], pred)
        assert rel_error(grad, numeric) < 1e-4


class TestConfig:
    def test_defaults(self):
        c = TR.TrainConfig()
        assert (c.optimizer, c.learning_rate, c.batch_size, c.epochs) == ("adam", 1e-3, 32, 100)
        assert (c.validation_fraction, c.early_stop_patience) == (0.2, 10)

    @pytest.mark.parametrize("kw", [dict(validation_fraction=0.0), dict(validation_fraction=1.0),
                                    dict(learning_rate=-1.0), dict(optimizer="rmsprop"), dict(epochs=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TR.TrainConfig(**kw)


class TestSplit:
    def test_sizes(self):
        ds = D.synthesize_dataset(100, seed=0)
        tr, va = TR.split_train_val(ds, 0.2, seed=1)
        assert (len(tr), len(va)) == (80, 20)

    def test_deterministic(self, tiny_data):
        a = TR.split_train_val(tiny_data, 0.25, 3)
        b = TR.split_train_val(tiny_data, 0.25, 3)
        assert a[0].equals(b[0]) and a[1].equals(b[1])

    def test_partition(self, tiny_data):
        tr, va = TR.split_train_val(tiny_data, 0.3, 5)
        keys = sorted(c.tobytes() for c in np.concatenate([tr.coords, va.coords]))
        assert keys == sorted(c.tobytes() for c in tiny_data.coords)


class TestOptimizers:
    @pytest.mark.parametrize("opt", [TR.SGDMomentum(0.05, 0.9), TR.Adam(0.1)])
    def test_quadratic(self, opt):
        p = {"x": np.array([0.0])}
        for _ in range(200):
            opt.step(p, {"x": 2 * (p["x"] - 3.0)})
        assert abs(p["x"][0] - 3.0) < 1e-3


class TestTrain:
    def test_zero_learning_rate_is_identity(self, tiny_data):
        model = M.init_model(tiny_spec(), seed=0)
        out, curve = TR.train(model, tiny_data, TR.TrainConfig(epochs=1, learning_rate=0.0))
        assert len(curve) == 1
        for (_, _, a), (_, _, b) in zip(model.named_tensors(), out.named_tensors()):
            assert a.tobytes() == b.tobytes()

    def test_zero_learning_rate_bn_model(self, tiny_data):
        spec = M.ModelSpec("bn", (1, 96, 96), (
            M.LayerSpec("conv", "c", filters=4, stride=4, use_bias=False), M.LayerSpec("batch_norm", "bn"),
            M.LayerSpec("relu6", "r"), *M.regression_head()))
        model = M.init_model(spec, seed=0)
        out, _ = TR.train(model, tiny_data, TR.TrainConfig(epochs=1, learning_rate=0.0, optimizer="sgd_momentum"))
        trainable = TR.trainable_arrays(model)
        for key, arr in TR.trainable_arrays(out).items():
            assert arr.tobytes() == trainable[key].tobytes()
        # running statistics are not parameters of the optimizer; they still track the data
        assert not np.array_equal(out.params["bn"].bn_mean, model.params["bn"].bn_mean)

    def test_input_model_untouched(self, tiny_data):
        model = M.init_model(tiny_spec(), seed=0)
        before = [a.copy() for _, _, a in model.named_tensors()]
        TR.train(model, tiny_data, TR.TrainConfig(epochs=2, learning_rate=1e-2))
        for a, (_, _, b) in zip(before, model.named_tensors()):
            np.testing.assert_array_equal(a, b)

    def test_best_epoch_returned(self, tiny_data):
        tr, va = TR.split_train_val(tiny_data, 0.25, 0)
        cfg = TR.TrainConfig(epochs=6, batch_size=8, learning_rate=3e-2, early_stop_patience=None)
        best, curve = TR.train(M.init_model(tiny_spec(), seed=1), tr, cfg, validation=va)
        got = E.rmse(E.predict_batch(best, va), va.coords)
        assert got == pytest.approx(min(r.val_rmse_px for r in curve.records), rel=1e-6)

    def test_descent_and_determinism(self):
        ds = D.synthesize_dataset(8, seed=0)
        cfg = TR.TrainConfig(epochs=5, batch_size=8, early_stop_patience=None)
        _, c1 = TR.train(M.build_manual_cnn(0), ds, cfg, validation=ds)
        _, c2 = TR.train(M.build_manual_cnn(0), ds, cfg, validation=ds)
        assert c1.records[4].train_mse < c1.records[0].train_mse
        assert [r.val_rmse_px for r in c1.records] == [r.val_rmse_px for r in c2.records]

    def test_early_stopping(self, tiny_data):
        cfg = TR.TrainConfig(epochs=50, learning_rate=0.0, early_stop_patience=2)
        _, curve = TR.train(M.init_model(tiny_spec(), seed=0), tiny_data, cfg)
        assert len(curve) == 3  # best at epoch 1, then two epochs without improvement

    def test_stop_at_rmse(self, tiny_data):
        cfg = TR.TrainConfig(epochs=20, stop_at_rmse_px=1e6)
        _, curve = TR.train(M.init_model(tiny_spec(), seed=0), tiny_data, cfg)
        assert len(curve) == 1

    def test_masked_training_on_incomplete(self, synth_missing):
        _, curve = TR.train(M.init_model(tiny_spec(), seed=0), synth_missing, TR.TrainConfig(epochs=2))
        assert all(math.isfinite(r.train_mse) for r in curve.records)

    def test_non_finite_loss(self, tiny_data):
        model = M.init_model(tiny_spec(), seed=0)
        model.params["regression"].bias[0] = np.inf
        with pytest.raises(TR.TrainingError, match="epoch 1, batch 0"):
            TR.train(model, tiny_data, TR.TrainConfig(epochs=1))

    def test_empty(self):
        with pytest.raises(TR.TrainingError):
            TR.train(M.init_model(tiny_spec()), D.Dataset.empty(), TR.TrainConfig())


class TestCurve:
    def test_csv_roundtrip(self, tiny_data):
        _, curve = TR.train(M.init_model(tiny_spec(), seed=0), tiny_data, TR.TrainConfig(epochs=2))
        text = curve.to_csv()
        assert text.splitlines()[0] == "epoch,train_mse,val_mse,val_rmse_px,seconds"
        back = TR.TrainingCurve.from_csv(text)
        assert back.records == curve.records
        assert [r.epoch for r in back.records] == [1, 2]


class TestRandomSearch:
    SPACE = TR.SearchSpace(conv_blocks=(3, 4), filters=(4, 8), dense_width=(0, 16))

    def test_budget_one(self, tiny_data):
        spec, trials = TR.random_search_tune(self.SPACE, 1, tiny_data, TR.TrainConfig(epochs=1))
        assert len(trials) == 1 and spec == trials[0].spec

    def test_argmin_and_determinism(self, tiny_data):
        cfg = TR.TrainConfig(epochs=1, seed=3)
        spec, trials = TR.random_search_tune(self.SPACE, 3, tiny_data, cfg)
        best = min(t.val_rmse_px for t in trials)
        assert all(best <= t.val_rmse_px for t in trials)
        assert spec == next(t.spec for t in trials if t.val_rmse_px == best)
        spec2, trials2 = TR.random_search_tune(self.SPACE, 3, tiny_data, cfg)
        assert spec2 == spec
        assert [t.params for t in trials2] == [t.params for t in trials]
        assert [t.val_rmse_px for t in trials2] == [t.val_rmse_px for t in trials]
        assert TR.trials_to_csv(trials).count("\n") == 4

    def test_sample_in_space(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            p = TR.SearchSpace().sample(rng)
            assert 3 <= p["conv_blocks"] <= 5 and len(p["filters"]) == p["conv_blocks"]
            assert 3e-4 <= p["learning_rate"] <= 3e-3

    def test_budget_validation(self, tiny_data):
        with pytest.raises(ValueError):
            TR.random_search_tune(self.SPACE, 0, tiny_data, TR.TrainConfig())
