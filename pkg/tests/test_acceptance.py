"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` (lines are repeated in the terminal
summary) or ``python tests/test_acceptance.py``.
"""

import io
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from kpbench import augmentation as A
from kpbench import cli
from kpbench import dataset as D
from kpbench import evaluation as E
from kpbench import imputation as I
from kpbench import models as M
from kpbench import tensor as T
from kpbench import training as TR

sys.path.insert(0, str(Path(__file__).parent))
from test_augmentation import marker_centroid, sample_at  # noqa: E402
from test_imputation import brute_force_knn, random_table  # noqa: E402
from test_models import PUBLISHED_SIZES  # noqa: E402
import test_tensor  # noqa: E402

RESULTS: list = []


def record(n: int, ok, detail: str) -> None:
    status = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
    line = f"criterion {n:>2}: {status}  {detail}"
    RESULTS.append(line)
    print(line)


def published_rows():
    out = []
    for entry in PUBLISHED_SIZES:
        values = entry.values if hasattr(entry, "values") else entry
        out.append(tuple(values))
    return out


def test_c01_mobilenetv2_trunk_count():
    t0 = time.perf_counter()
    trunk = M.count_parameters(M.build_mobilenetv2_regressor(1.0, seed=0), "trunk")
    dt = time.perf_counter() - t0
    ok = trunk["total"] == 2_257_984 and dt < 5
    record(1, ok, f"trunk total {trunk['total']:,} (trainable {trunk['trainable']:,} + "
                  f"bn statistics {trunk['non_trainable']:,}); expected 2,257,984; {dt:.2f} s")
    assert ok


def test_c02_size_law():
    misses = []
    for label, params, mb in published_rows():
        err = abs(4 * params / 1e6 - mb) / mb
        if err >= 0.10:
            misses.append(f"{label}: 4x{params:,} B = {4 * params / 1e6:.3f} MB vs {mb} MB ({err:.1%})")
    local_ok = True
    for name in ("baseline", "manual", "mobilenetv2"):
        m = M.build(name)
        buf = io.BytesIO()
        M.save_weights(m, buf)
        exact = 4 * M.count_parameters(m)["total"] + M.header_bytes(m.spec)
        local_ok &= M.model_size_bytes(m) == exact == len(buf.getvalue())
    ok = not misses and local_ok
    detail = f"{len(published_rows()) - len(misses)}/{len(published_rows())} published pairs within 10%; " \
             f"local models exact: {local_ok}"
    if misses:
        detail += "; outside: " + "; ".join(misses)
    record(2, ok, detail)
    assert ok, detail


def test_c03_gradient_suite():
    t0 = time.perf_counter()
    suite = test_tensor.TestGradients()
    kinds = [n for n in dir(suite) if n.startswith("test_")]
    for i in range(20):
        for name in kinds:
            if name == "test_batch_norm":
                suite.test_batch_norm(i, True)
                suite.test_batch_norm(i, False)
            else:
                getattr(suite, name)(i)
        rng = np.random.default_rng([77, i])
        pred, target = test_tensor.f64(rng, 3, 30), test_tensor.f64(rng, 3, 30)
        mask = (rng.random((3, 30)) < 0.6).astype(float)
        mask[0, 0] = 1
        _, g = TR.mse_loss(pred, target, mask)
        num = T.finite_difference_grad(lambda p: TR.mse_loss(p, target, mask)[0], pred)
        assert np.linalg.norm(g - num) / (np.linalg.norm(g) + np.linalg.norm(num)) < 1e-4
    dt = time.perf_counter() - t0
    ok = dt < 60
    record(3, ok, f"{len(kinds)} layer checks + masked MSE x 20 instances each, float64; {dt:.1f} s")
    assert ok


def test_c04_imputation_oracles():
    t0 = time.perf_counter()
    ff = I.forward_fill_array(np.array([[1.0], [np.nan], [np.nan], [4.0]]))[:, 0].tolist() == [1, 1, 1, 4]
    ff &= I.forward_fill_array(np.array([[np.nan], [2.0], [4.0]]))[:, 0].tolist() == [3, 2, 4]
    rng = np.random.default_rng(4)
    compared = errors = 0
    for _ in range(200):
        x = random_table(rng)
        k = int(rng.integers(1, 4))
        try:
            expected = np.array(brute_force_knn(x.tolist(), k))
        except I.ImputationError:
            with pytest.raises(I.ImputationError):
                I.knn_impute_array(x, k)
            errors += 1
            continue
        np.testing.assert_allclose(I.knn_impute_array(x, k), expected, atol=1e-6)
        compared += 1
    dt = time.perf_counter() - t0
    ok = ff and dt < 30
    record(4, ok, f"forward-fill fixtures {'match' if ff else 'differ'}; knn vs brute force on 200 tables: "
                  f"{compared} value matches, {errors} matching error cases; {dt:.1f} s")
    assert ok


def test_c05_marker_pixel_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(500):
        x, y = rng.integers(20, 76, size=2)
        r = A.shift_sample(A.rotate_sample(sample_at(x, y), rng.uniform(-15, 15)), *rng.integers(-8, 9, size=2))
        cx, cy = marker_centroid(r.image)
        worst = max(worst, float(np.hypot(cx - r.coords[0], cy - r.coords[1])))
    ds = D.synthesize_dataset(40, seed=5)
    unchanged = all(
        A.adjust_brightness(s, f).coords.tobytes() == s.coords.tobytes()
        and A.add_gaussian_noise(s, 3 * f, 1).coords.tobytes() == s.coords.tobytes()
        for s in ds for f in (0.5, 1.4))
    out = A.augment_offline(ds, A.AugmentationSpec(seed=5))
    in_frame = bool((out.coords >= 0).all() and (out.coords < 96).all())
    dt = time.perf_counter() - t0
    ok = worst <= 1.0 and unchanged and in_frame and dt < 60
    record(5, ok, f"max marker error {worst:.3f} px over 500 cases; photometric keypoints bitwise equal: "
                  f"{unchanged}; {len(out)} emitted samples in frame: {in_frame}; {dt:.1f} s")
    assert ok


def test_c06_overfit_capacity():
    t0 = time.perf_counter()
    ds = D.synthesize_dataset(8, seed=0)
    cfg = TR.TrainConfig(epochs=500, batch_size=8, early_stop_patience=None, stop_at_rmse_px=1.0)
    runs = [TR.train(M.build_manual_cnn(0), ds, cfg, validation=ds) for _ in range(2)]
    (m1, c1), (m2, c2) = runs
    train_rmse = E.rmse(E.predict_batch(m1, ds), ds.coords)
    same = all(a.tobytes() == b.tobytes() for (_, _, a), (_, _, b) in zip(m1.named_tensors(), m2.named_tensors()))
    same &= [r.val_rmse_px for r in c1.records] == [r.val_rmse_px for r in c2.records]
    dt = time.perf_counter() - t0
    ok = train_rmse < 1.0 and len(c1) <= 500 and same and dt < 120
    record(6, ok, f"train RMSE {train_rmse:.3f} px after {len(c1)} epochs; identical rerun: {same}; "
                  f"{dt:.1f} s for both runs")
    assert ok


TREND_SEEDS = (0, 1, 2)


def test_c07_desk_scale(tmp_path):
    t0 = time.perf_counter()
    ds = D.synthesize_dataset(2000, seed=2024)
    train, val = TR.split_train_val(ds, 0.2, seed=0)
    cfg = TR.TrainConfig(epochs=100, stop_at_rmse_px=5.0, early_stop_patience=10)
    _, curve = TR.train(M.build_manual_cnn(0), train, cfg, validation=val)
    gate_ok = curve.best.val_rmse_px < 5.0 and len(curve) <= 100
    gate = (f"manual CNN on {len(train)}/{len(val)} split: val RMSE {curve.best.val_rmse_px:.2f} px "
            f"at epoch {curve.best.epoch}")

    # soft, report-only trend over 3 seeds at reduced scale
    holds = []
    for seed in TREND_SEEDS:
        data = tmp_path / f"trend{seed}.csv"
        D.save_training_csv(D.synthesize_dataset(400, seed=100 + seed, missing_fraction=0.5), data)
        _, trend = cli.run_grid(str(data), "manual", "none", "off,on", str(tmp_path / f"g{seed}" / "report.csv"),
                                warmup=0, reps=3, bench_images=20, epochs=8, batch_size=32, lr=1e-3,
                                optimizer="adam", val_fraction=0.2, patience=0, k=5, rot=15.0, shift=8,
                                bright=0.3, noise=12.0, variants=2, seed=seed)
        holds.append(trend[0].augmentation_helps)
        print(f"  trend seed {seed}: aug {trend[0].rmse_aug:.3f} px vs no-aug {trend[0].rmse_no_aug:.3f} px")
    majority = sum(holds) * 2 > len(holds)
    dt = time.perf_counter() - t0
    ok = gate_ok and dt < 30 * 60
    record(7, ok, f"{gate}; trend aug <= no-aug held in {sum(holds)}/{len(holds)} seeds "
                  f"({'majority' if majority else 'minority'}, report-only); {dt / 60:.1f} min")
    assert ok


def test_c08_latency_ordering():
    t0 = time.perf_counter()
    ds = D.synthesize_dataset(100, seed=8)
    res = {name: E.time_inference(M.build(name), ds, warmup=1, repetitions=5)
           for name in ("manual", "baseline", "mobilenetv2")}
    dt = time.perf_counter() - t0
    ok = res["manual"].sec_per_100 < res["baseline"].sec_per_100 and dt < 300
    record(8, ok, "sec/100 images (median of 5): " + ", ".join(
        f"{k} {v.sec_per_100:.3f}" for k, v in res.items()) + f"; {E.hardware_descriptor()}")
    assert ok


def test_c09_real_data():
    train_path, test_path = D.find_real_data()
    if train_path is None or test_path is None:
        record(9, None, f"real data not found (set {D.DATA_DIR_ENV} to a directory with training.csv and test.csv)")
        pytest.skip("Kaggle CSVs absent")
    train = D.load_training_csv(train_path)
    test = D.load_test_csv(test_path)
    frac = D.null_profile(train).complete_fraction * 100
    ok = len(train) == 7049 and len(test) == 1783 and abs(frac - 30.36) <= 0.05
    record(9, ok, f"{len(train)} training / {len(test)} test samples; complete-case {frac:.2f}%")
    assert ok


def _strip_timing(path: Path) -> str:
    """Report and curve CSVs with their wall-clock columns blanked."""
    text = path.read_text()
    if text.startswith(",".join(E.REPORT_COLUMNS)):
        rows = E.parse_report_csv(text)
        return repr([(r.model, r.impute, r.augment, r.params_trainable, r.params_total, r.size_bytes, r.rmse_px)
                     for r in rows])
    if text.startswith("epoch,"):
        return repr([(r.epoch, r.train_mse, r.val_mse, r.val_rmse_px) for r in TR.TrainingCurve.from_csv(text).records])
    return text


def _run_all(root: Path, capsys) -> dict:
    root.mkdir(parents=True)
    cwd = os.getcwd()
    os.chdir(root)
    try:
        fast = ["--epochs", "2", "--batch-size", "16", "--variants", "1"]
        cmds = [
            ["synth", "--n", "30", "--seed", "7", "--missing", "0.4", "--out", "d.csv"],
            ["impute", "--method", "forward-fill", "--in", "d.csv", "--out", "ff.csv"],
            ["impute", "--method", "knn", "--k", "3", "--in", "d.csv", "--out", "knn.csv"],
            ["augment", "--in", "d.csv", "--out", "aug.csv", "--seed", "3"],
            ["train", "--model", "manual", "--data", "d.csv", "--impute", "knn", "--augment", "on",
             "--out", "w.kpbw", "--curve", "curve.csv", "--seed", "4", *fast],
            ["bench", "--weights", "w.kpbw", "--data", "d.csv", "--warmup", "1", "--reps", "3", "--out", "bench.csv"],
            ["report", "merge", "bench.csv", "bench.csv", "--out", "merged.csv"],
            ["grid", "--data", "d.csv", "--models", "manual,mobilenetv2", "--imputes", "none,forward-fill",
             "--augment", "on,off", "--out", "grid/report.csv", "--bench-images", "4", "--warmup", "0",
             "--reps", "3", *fast],
        ]
        cmds.append(["replay", "d.csv.manifest.json"])
        for argv in cmds:
            assert cli.main(argv) == 0, argv
        capsys.readouterr()
        assert cli.main(["model", "describe", "manual"]) == 0
        describe = capsys.readouterr().out
        out = {"describe": describe}
        files = sorted(p for p in Path(".").rglob("*") if p.is_file())
        timing = {t for p in files if p.name.endswith(".manifest.json")
                  for t in json.loads(p.read_text())["timing_outputs"]}
        for p in files:
            if not p.name.endswith(".txt"):
                if p.name.endswith(".manifest.json"):
                    m = json.loads(p.read_text())
                    # digests of wall-clock files legitimately differ, whether written or read
                    for key in ("inputs", "outputs"):
                        m[key] = {k: v for k, v in m[key].items() if k not in timing}
                    out[str(p)] = json.dumps(m, sort_keys=True)
                elif p.suffix == ".csv":
                    out[str(p)] = _strip_timing(p)
                else:
                    out[str(p)] = p.read_bytes()
        return out
    finally:
        os.chdir(cwd)


def test_c10_determinism(tmp_path, capsys):
    t0 = time.perf_counter()
    a = _run_all(tmp_path / "run1", capsys)
    b = _run_all(tmp_path / "run2", capsys)
    differing = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    dt = time.perf_counter() - t0
    ok = not differing and dt < 600
    with capsys.disabled():
        record(10, ok, f"{len(a)} non-timing artifacts from 9 subcommands compared across two runs; "
                       f"differing: {differing or 'none'}; {dt:.0f} s")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
