import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kpbench import dataset as D
from kpbench import evaluation as E
from kpbench import models as M
from kpbench import training as TR


class FakeClock:
    """Advances only when the stub forward pass says so."""

    def __init__(self):
        self.now = 0.0

    def __call__(self):
        return self.now


def costed_forward(clock, per_image):
    def fwd(model, batch):
        clock.now += per_image * batch.shape[0]
    return fwd


@pytest.fixture(scope="module")
def manual():
    return M.build_manual_cnn(0)


def row(**kw):
    base = dict(model="manual", impute="none", augment="off", params_trainable=10, params_total=12,
                size_bytes=100, rmse_px=2.5, sec_per_100=0.4, hardware="cpu", warmup=3, reps=7)
    return E.BenchRow(**{**base, **kw})


class TestRmse:
    def test_zero(self):
        assert E.rmse(np.ones((2, 30)), np.ones((2, 30))) == 0.0

    def test_hand_value(self):
        assert E.rmse(np.array([3.0, 4.0]), np.zeros(2)) == pytest.approx(3.5355, abs=1e-4)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_square_is_mse(self, seed):
        rng = np.random.default_rng(seed)
        p, t = rng.uniform(0, 96, (3, 30)), rng.uniform(0, 96, (3, 30))
        mask = rng.random((3, 30)) < 0.8
        if not mask.any():
            return
        mse, _ = TR.mse_loss(p, t, mask.astype(float))
        assert E.rmse(p, t, mask) ** 2 == pytest.approx(mse, abs=1e-6)

    def test_nan_targets_ignored(self):
        assert E.rmse(np.array([3.0, 100.0]), np.array([0.0, np.nan])) == 3.0

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000), axis=st.integers(0, 1))
    def test_translation_detecting(self, seed, axis):
        rng = np.random.default_rng(seed)
        t = rng.uniform(0, 96, (4, 30))
        p = t + rng.normal(0, 1, t.shape)
        p[:, axis::2] = t[:, axis::2]  # shifted axis starts exact
        shifted = p.copy()
        shifted[:, axis::2] += 1.0
        assert E.rmse(shifted, t) > E.rmse(p, t)

    def test_all_masked(self):
        with pytest.raises(ValueError):
            E.rmse(np.zeros(2), np.full(2, np.nan))


class TestPredict:
    def test_empty(self, manual):
        assert E.predict_batch(manual, D.Dataset.empty()).shape == (0, 30)

    def test_count_and_batch_invariance(self, manual):
        ds = D.synthesize_dataset(10, seed=2)
        a = E.predict_batch(manual, ds, batch_size=1)
        b = E.predict_batch(manual, ds, batch_size=64)
        assert a.shape == (10, 30)
        np.testing.assert_allclose(a, b, atol=1e-4)


class TestTiming:
    def test_mock_clock_10ms_per_image(self, manual):
        clock = FakeClock()
        ds = D.synthesize_dataset(30, seed=0)
        t = E.time_inference(manual, ds, warmup=2, repetitions=5, clock=clock,
                             forward_fn=costed_forward(clock, 0.010))
        assert t.sec_per_100 == pytest.approx(1.0)
        assert t.n_images == 30 and len(t.per_rep_sec_per_100) == 5

    def test_intensive(self, manual):
        ds = D.synthesize_dataset(40, seed=0)
        a = E.measure_inference_time(manual, ds.subset(np.arange(20)), warmup=1, repetitions=5)
        b = E.measure_inference_time(manual, ds, warmup=1, repetitions=5)
        assert abs(b - a) / a <= 0.20

    def test_median_robust_to_one_outlier(self, manual):
        ds = D.synthesize_dataset(5, seed=0)
        clock = FakeClock()
        costs = itertools.chain([0.01] * 3, [0.011, 0.012, 5.0, 0.0105, 0.0108])  # one contaminated rep
        clean = [0.011, 0.012, 0.0105, 0.0108]

        def fwd(model, batch):
            clock.now += next(costs) * batch.shape[0]

        t = E.time_inference(manual, ds, warmup=3, repetitions=5, clock=clock, forward_fn=fwd)
        spread = (max(clean) - min(clean)) * 100
        assert min(clean) * 100 - spread <= t.sec_per_100 <= max(clean) * 100 + spread

    def test_validation(self, manual):
        ds = D.synthesize_dataset(2, seed=0)
        with pytest.raises(ValueError):
            E.time_inference(manual, D.Dataset.empty())
        with pytest.raises(ValueError):
            E.time_inference(manual, ds, repetitions=2)

    def test_hardware_descriptor(self):
        assert "1 thread" in E.hardware_descriptor()


class TestReport:
    def test_invariants(self):
        for bad in (dict(rmse_px=-1.0), dict(sec_per_100=math.inf), dict(size_bytes=-5)):
            with pytest.raises(ValueError):
                row(**bad)

    def test_size_mb_decimal(self):
        assert row(size_bytes=956_934).size_mb == 0.956934

    def test_empty_report(self, tmp_path):
        E.generate_report([], tmp_path / "r.csv", tmp_path / "r.txt")
        assert (tmp_path / "r.csv").read_text().splitlines() == [",".join(E.REPORT_COLUMNS)]
        assert len((tmp_path / "r.txt").read_text().splitlines()) == 2

    def test_column_order(self):
        assert E.REPORT_COLUMNS[:9] == ("model", "impute", "augment", "params_trainable", "params_total",
                                        "size_bytes", "rmse_px", "sec_per_100", "hardware")

    def test_roundtrip(self, tmp_path):
        rows = [row(), row(model="baseline", rmse_px=0.1 + 0.2, hardware="cpu, with comma")]
        E.generate_report(rows, tmp_path / "r.csv", tmp_path / "r.txt")
        assert E.parse_report_csv((tmp_path / "r.csv").read_text()) == rows
        text = (tmp_path / "r.txt").read_text()
        assert "0.00" in text and "baseline" in text

    def test_merge(self):
        a, b = E.rows_to_csv([row()]), E.rows_to_csv([row(model="x"), row(model="y")])
        assert [r.model for r in E.merge_reports([a, b])] == ["manual", "x", "y"]

    def test_bad_header(self):
        with pytest.raises(ValueError):
            E.parse_report_csv("a,b\n1,2\n")

    def test_trend(self):
        rows = [row(augment="off", rmse_px=3.0), row(augment="on", rmse_px=2.0),
                row(impute="knn", augment="off", rmse_px=1.0), row(impute="knn", augment="on", rmse_px=1.5)]
        trend = E.augmentation_trend(rows)
        assert [(t.impute, t.augmentation_helps) for t in trend] == [("none", True), ("knn", False)]
        assert E.trend_to_csv(trend).splitlines()[1].endswith(",1")
