"""Masked-MSE training loop, optimizers, curves and a random-search tuner."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import models as M
from .dataset import COORD_CENTER, Dataset, normalize_coords, normalize_images


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    optimizer: str = "adam"  # "adam" | "sgd_momentum"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    validation_fraction: float = 0.2
    early_stop_patience: Optional[int] = 10
    stop_at_rmse_px: Optional[float] = None  # end training once validation RMSE drops below this

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    val_rmse_px: float
    seconds: float


CURVE_COLUMNS = ("epoch", "train_mse", "val_mse", "val_rmse_px", "seconds")


@dataclass
class TrainingCurve:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def best(self) -> EpochRecord:
        return min(self.records, key=lambda r: (r.val_rmse_px, r.epoch))

    def to_csv(self, stream=None) -> str:
        buf = stream or io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for r in self.records:
            w.writerow([r.epoch, repr(r.train_mse), repr(r.val_mse), repr(r.val_rmse_px), repr(r.seconds)])
        return buf.getvalue() if stream is None else ""

    @staticmethod
    def from_csv(text: str) -> "TrainingCurve":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != CURVE_COLUMNS:
            raise ValueError("not a training-curve CSV")
        return TrainingCurve([EpochRecord(int(r[0]), *map(float, r[1:])) for r in rows[1:]])


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def mse_loss(pred: np.ndarray, target: np.ndarray, mask: Optional[np.ndarray] = None):
    """Mean squared error over the coordinates where ``mask`` is 1.

    Returns ``(loss, d loss / d pred)``. Target entries under a zero mask may
    be NaN.
    """
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: pred {pred.shape} vs target {target.shape}")
    if mask is None:
        mask = np.ones_like(pred)
    elif mask.shape != pred.shape:
        raise ValueError(f"mse_loss: mask {mask.shape} vs pred {pred.shape}")
    m = float(mask.sum())
    if m == 0:
        raise ValueError("mse_loss: no supervised coordinates in batch")
    diff = np.where(mask > 0, pred - np.nan_to_num(target), 0).astype(pred.dtype)
    loss = float((diff.astype(np.float64) ** 2).sum() / m)
    return loss, (2.0 / m) * diff


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

class SGDMomentum:
    def __init__(self, learning_rate: float, momentum: float = 0.9):
        self.lr = learning_rate
        self.momentum = momentum
        self.velocity: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        for key, g in grads.items():
            v = self.velocity.get(key)
            v = -self.lr * g if v is None else self.momentum * v - self.lr * g
            self.velocity[key] = v
            params[key] += v.astype(params[key].dtype, copy=False)


class Adam:
    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = epsilon
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = math.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for key, g in grads.items():
            m = self.m.get(key)
            if m is None:
                m = self.m[key] = np.zeros_like(g)
                self.v[key] = np.zeros_like(g)
            v = self.v[key]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[key] -= (self.lr * corr) * m / (np.sqrt(v) + self.eps)


def make_optimizer(config: TrainConfig):
    if config.optimizer == "adam":
        return Adam(config.learning_rate, config.beta1, config.beta2, config.adam_epsilon)
    return SGDMomentum(config.learning_rate, config.momentum)


def trainable_arrays(model: M.Model) -> dict:
    """``{(layer, tensor): array}`` views of the trainable tensors."""
    out = {}
    for lname, p in model.params.items():
        for tname, arr in p.tensors().items():
            if p.trainable.get(tname, True):
                out[(lname, tname)] = arr
    return out


# ---------------------------------------------------------------------------
# data plumbing
# ---------------------------------------------------------------------------

def split_train_val(dataset: Dataset, fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    n = len(dataset)
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * fraction))
    if n >= 2:
        n_val = min(max(n_val, 1), n - 1)
    return dataset.subset(perm[n_val:]), dataset.subset(perm[:n_val])


def _targets(dataset: Dataset, dtype):
    y = normalize_coords(dataset.coords)
    mask = dataset.mask.astype(dtype)
    return np.nan_to_num(y).astype(dtype), mask


def predict_normalized(model: M.Model, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    outs = [M.forward(model, normalize_images(images[i:i + batch_size]))
            for i in range(0, len(images), batch_size)]
    if not outs:
        return np.zeros((0, 30), dtype=model.dtype)
    return np.concatenate(outs)


def masked_mse(pred, target, mask) -> float:
    m = mask.sum()
    if m == 0:
        return float("nan")
    d = (pred.astype(np.float64) - target) * mask
    return float((d ** 2).sum() / m)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train(model: M.Model, dataset: Dataset, config: TrainConfig,
          validation: Optional[Dataset] = None,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> tuple[M.Model, TrainingCurve]:
    """Mini-batch training on the masked MSE.

    Without an explicit ``validation`` set, ``config.validation_fraction`` of
    ``dataset`` is held out. The input model is not modified; the returned
    model carries the parameters of the epoch with the lowest validation
    RMSE.
    """
    if len(dataset) == 0:
        raise TrainingError("cannot train on an empty dataset")
    if validation is None:
        dataset, validation = split_train_val(dataset, config.validation_fraction, config.seed)
    work = model.copy()
    dtype = work.dtype
    y_train, m_train = _targets(dataset, dtype)
    y_val, m_val = _targets(validation, np.float64)
    params = trainable_arrays(work)
    opt = make_optimizer(config)
    rng = np.random.default_rng(config.seed)
    drop_rng = np.random.default_rng([config.seed, 1])

    curve = TrainingCurve()
    best_rmse = math.inf
    best = work.copy()
    since_best = 0
    n = len(dataset)
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        sq_sum = 0.0
        count = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = np.sort(order[start:start + config.batch_size])
            mask = m_train[idx]
            if mask.sum() == 0:
                continue
            x = normalize_images(dataset.images[idx])
            out, caches, bn_updates = M.forward_train(work, x, rng=drop_rng)
            loss, grad = mse_loss(out, y_train[idx], mask)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            grads = M.backward_model(work, caches, grad)
            del caches
            flat = {(l, t): g for l, pg in grads.items() for t, g in pg.items() if (l, t) in params}
            opt.step(params, flat)
            for lname, (mean, var) in bn_updates.items():
                p = work.params[lname]
                p.bn_mean[...] = mean
                p.bn_var[...] = var
            sq_sum += loss * float(mask.sum())
            count += float(mask.sum())
        pred_val = predict_normalized(work, validation.images)
        val_mse = masked_mse(pred_val, y_val, m_val)
        if not math.isfinite(val_mse):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        record = EpochRecord(epoch, sq_sum / max(count, 1.0), val_mse,
                             math.sqrt(val_mse) * COORD_CENTER, time.perf_counter() - t0)
        curve.records.append(record)
        if on_epoch:
            on_epoch(record)
        if record.val_rmse_px < best_rmse:
            best_rmse = record.val_rmse_px
            best = work.copy()
            since_best = 0
            if config.stop_at_rmse_px is not None and best_rmse < config.stop_at_rmse_px:
                break
        else:
            since_best += 1
            if config.early_stop_patience is not None and since_best >= config.early_stop_patience:
                break
    return best, curve


# ---------------------------------------------------------------------------
# random search
# ---------------------------------------------------------------------------

@dataclass
class SearchSpace:
    conv_blocks: tuple = (3, 5)  # inclusive range
    filters: tuple = (8, 16, 24, 32, 48, 64, 96, 128)
    dense_width: tuple = (0, 32, 64, 128)  # 0 = no hidden layer
    learning_rate: tuple = (3e-4, 3e-3)  # log-uniform

    def sample(self, rng: np.random.Generator) -> dict:
        blocks = int(rng.integers(self.conv_blocks[0], self.conv_blocks[1] + 1))
        filters = sorted(int(rng.choice(self.filters)) for _ in range(blocks))
        lo, hi = np.log(self.learning_rate[0]), np.log(self.learning_rate[1])
        return {
            "conv_blocks": blocks,
            "filters": filters,
            "dense_width": int(rng.choice(self.dense_width)),
            "learning_rate": float(np.exp(rng.uniform(lo, hi))),
        }


@dataclass(frozen=True)
class Trial:
    index: int
    params: dict
    spec: M.ModelSpec
    parameters: int
    val_rmse_px: float
    epochs_run: int


def trial_spec(index: int, params: dict) -> M.ModelSpec:
    return M.custom_cnn_spec(f"tuned_{index}", params["filters"], params["dense_width"] or None)


def random_search_tune(search_space: SearchSpace, budget: int, dataset: Dataset, config: TrainConfig,
                       validation: Optional[Dataset] = None):
    """Independent short training runs over sampled CNN configurations.

    Returns ``(best_spec, trials)``; ties go to the earlier trial.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if validation is None:
        dataset, validation = split_train_val(dataset, config.validation_fraction, config.seed)
    rng = np.random.default_rng([config.seed, 7])
    trials = []
    for i in range(budget):
        params = search_space.sample(rng)
        spec = trial_spec(i, params)
        cfg = TrainConfig(**{**asdict(config), "learning_rate": params["learning_rate"], "seed": config.seed + i})
        _, curve = train(M.init_model(spec, seed=config.seed + i), dataset, cfg, validation=validation)
        trials.append(Trial(i, params, spec, M.count_parameters(spec)["total"],
                            curve.best.val_rmse_px, len(curve)))
    best = min(trials, key=lambda t: (t.val_rmse_px, t.index))
    return best.spec, trials


def trials_to_csv(trials) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trial", "conv_blocks", "filters", "dense_width",
                "learning_rate", "parameters", "epochs_run", "val_rmse_px"])
    for t in trials:
        p = t.params
        w.writerow([t.index, p["conv_blocks"], "-".join(map(str, p["filters"])), p["dense_width"],
                    repr(p["learning_rate"]), t.parameters, t.epochs_run,
                    repr(t.val_rmse_px)])
    return buf.getvalue()
