"""RMSE, inference-latency measurement and Table-style benchmark reports."""

from __future__ import annotations

import csv
import io
import math
import os
import platform
import statistics
import time
from dataclasses import asdict, dataclass, fields
from typing import Callable, Iterable, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import models as M
from .dataset import Dataset, denormalize, normalize_images


def rmse(pred: np.ndarray, target: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    """Root of the masked mean squared error, in the units of the inputs (pixels).

    Without a mask, NaN targets are treated as absent.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"rmse: pred {pred.shape} vs target {target.shape}")
    if mask is None:
        mask = ~np.isnan(target)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("rmse: no ground-truth coordinates")
    d = pred[mask] - target[mask]
    return math.sqrt(float(np.mean(d * d)))


def predict_batch(model: M.Model, dataset: Dataset, batch_size: int = 64) -> np.ndarray:
    """Pixel-space predictions, (N, 30), in dataset order."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if len(dataset) == 0:
        return np.zeros((0, 30))
    out = [M.forward(model, normalize_images(dataset.images[i:i + batch_size]))
           for i in range(0, len(dataset), batch_size)]
    return denormalize(np.concatenate(out))


def hardware_descriptor() -> str:
    cpu = platform.processor() or platform.machine()
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    cpu = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return f"{cpu}; {os.cpu_count()} cpu; numpy {np.__version__}; 1 thread"


@dataclass(frozen=True)
class TimingResult:
    sec_per_100: float
    per_rep_sec_per_100: tuple
    n_images: int
    warmup: int
    repetitions: int


def time_inference(model, dataset: Dataset, warmup: int = 3, repetitions: int = 7, batch_size: int = 100,
                   clock: Callable[[], float] = time.perf_counter,
                   forward_fn: Optional[Callable] = None) -> TimingResult:
    """Time full passes over ``dataset`` and report the median per-100-image cost.

    Each repetition's total seconds are divided by the image count and scaled
    by 100. Runs with BLAS pinned to one thread.
    """
    if len(dataset) == 0:
        raise ValueError("inference timing needs a non-empty dataset")
    if repetitions < 3:
        raise ValueError("repetitions must be >= 3")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    fwd = forward_fn or M.forward
    batches = [normalize_images(dataset.images[i:i + batch_size]) for i in range(0, len(dataset), batch_size)]
    n = len(dataset)

    def one_pass():
        for b in batches:
            fwd(model, b)

    per_rep = []
    with threadpool_limits(limits=1):
        for _ in range(warmup):
            one_pass()
        for _ in range(repetitions):
            t0 = clock()
            one_pass()
            per_rep.append((clock() - t0) / n * 100.0)
    return TimingResult(statistics.median(per_rep), tuple(per_rep), n, warmup, repetitions)


def measure_inference_time(model, dataset: Dataset, warmup: int = 3, repetitions: int = 7, **kw) -> float:
    return time_inference(model, dataset, warmup, repetitions, **kw).sec_per_100


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchRow:
    model: str
    impute: str
    augment: str
    params_trainable: int
    params_total: int
    size_bytes: int
    rmse_px: float
    sec_per_100: float
    hardware: str
    warmup: int
    reps: int

    def __post_init__(self):
        for f in ("params_trainable", "params_total", "size_bytes", "rmse_px", "sec_per_100", "warmup", "reps"):
            v = getattr(self, f)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"BenchRow.{f} must be finite and >= 0, got {v}")

    @property
    def size_mb(self) -> float:
        return self.size_bytes / 1e6


REPORT_COLUMNS = tuple(f.name for f in fields(BenchRow))
_INT_COLUMNS = {"params_trainable", "params_total", "size_bytes", "warmup", "reps"}
_FLOAT_COLUMNS = {"rmse_px", "sec_per_100"}


def rows_to_csv(rows: Iterable[BenchRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(r, c) for c in REPORT_COLUMNS)])
    return buf.getvalue()


def parse_report_csv(text: str) -> list[BenchRow]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
        raise ValueError(f"report header must be {','.join(REPORT_COLUMNS)}")
    rows = []
    for rec in reader:
        kw = {}
        for c in REPORT_COLUMNS:
            v = rec[c]
            kw[c] = int(v) if c in _INT_COLUMNS else float(v) if c in _FLOAT_COLUMNS else v
        rows.append(BenchRow(**kw))
    return rows


def format_table(rows: Iterable[BenchRow]) -> str:
    head = ("model", "impute", "augment", "trainable", "total", "size_bytes", "MB", "rmse_px", "sec/100", "reps")
    body = [(r.model, r.impute, r.augment, f"{r.params_trainable:,}", f"{r.params_total:,}", f"{r.size_bytes:,}",
             f"{r.size_mb:.2f}", f"{r.rmse_px:.3f}", f"{r.sec_per_100:.4f}", f"{r.warmup}+{r.reps}")
            for r in rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(head)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(head, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for b in body:
        lines.append("  ".join(v.rjust(w) if i >= 3 else v.ljust(w) for i, (v, w) in enumerate(zip(b, widths))))
    hw = sorted({r.hardware for r in rows}) if body else []
    for h in hw:
        lines.append(f"hardware: {h}")
    return "\n".join(lines) + "\n"


def generate_report(rows: Iterable[BenchRow], csv_path, text_path=None) -> None:
    rows = list(rows)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        fh.write(rows_to_csv(rows))
    if text_path is not None:
        with open(text_path, "w", encoding="utf-8") as fh:
            fh.write(format_table(rows))


def merge_reports(texts: Iterable[str]) -> list[BenchRow]:
    rows = []
    for t in texts:
        rows.extend(parse_report_csv(t))
    return rows


@dataclass(frozen=True)
class TrendRow:
    model: str
    impute: str
    rmse_no_aug: float
    rmse_aug: float

    @property
    def augmentation_helps(self) -> bool:
        return self.rmse_aug <= self.rmse_no_aug


def augmentation_trend(rows: Iterable[BenchRow]) -> list[TrendRow]:
    """Pair each (model, impute) cell's augment=off row with its augment=on row."""
    by_key = {(r.model, r.impute, r.augment): r for r in rows}
    out = []
    for (model, impute, aug), r in by_key.items():
        if aug != "off" or (model, impute, "on") not in by_key:
            continue
        out.append(TrendRow(model, impute, r.rmse_px, by_key[(model, impute, "on")].rmse_px))
    return out


def trend_to_csv(trend: Iterable[TrendRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "impute", "rmse_no_aug", "rmse_aug", "aug_le_no_aug"])
    for t in trend:
        w.writerow([t.model, t.impute, repr(t.rmse_no_aug), repr(t.rmse_aug), int(t.augmentation_helps)])
    return buf.getvalue()
