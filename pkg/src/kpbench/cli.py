"""``kpbench`` command line.

Every command that writes a file also writes ``<file>.manifest.json`` next to
it, recording the argv, seeds and SHA-256 of inputs and outputs so the run can
be replayed with ``kpbench replay``.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import click
import numpy as np

from . import __version__
from . import augmentation as A
from . import dataset as D
from . import evaluation as E
from . import imputation as I
from . import models as M
from . import training as TR

# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    subcommand: str
    argv: list
    flags: dict
    seeds: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)  # path -> sha256
    outputs: dict = field(default_factory=dict)  # path -> sha256
    timing_outputs: list = field(default_factory=list)  # outputs containing wall-clock values
    tool_version: str = __version__

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"

    @staticmethod
    def from_json(text: str) -> "RunManifest":
        return RunManifest(**json.loads(text))


class _Run:
    """Collects the manifest of the current invocation."""

    def __init__(self, subcommand: str, flags: dict, seeds: Optional[dict] = None):
        self.manifest = RunManifest(subcommand, list(_ARGV), _jsonable(flags), seeds or {})

    def input(self, path) -> None:
        self.manifest.inputs[str(path)] = sha256_file(path)

    def output(self, path, timing: bool = False) -> None:
        self.manifest.outputs[str(path)] = sha256_file(path)
        if timing:
            self.manifest.timing_outputs.append(str(path))

    def write(self, primary) -> Path:
        path = Path(f"{primary}.manifest.json")
        path.write_text(self.manifest.to_json(), encoding="utf-8")
        return path


def _jsonable(flags: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in flags.items()}


_ARGV: list = []


class PipelineError(click.ClickException):
    exit_code = 1


def _load_training(path) -> D.Dataset:
    if not Path(path).is_file():
        raise PipelineError(f"input file not found: {path}")
    return D.load_training_csv(path)


def _ensure_parent(path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def _aug_spec(rot, shift, bright, noise, variants, seed) -> A.AugmentationSpec:
    return A.AugmentationSpec.symmetric(rot, shift, bright, noise, variants, seed)


def prepare_training_data(train_raw: D.Dataset, impute: str, augment: bool, k: int,
                          aug: A.AugmentationSpec) -> D.Dataset:
    """Impute the training split and optionally append augmented complete-case variants."""
    data = I.impute(train_raw, impute, k)
    if augment:
        complete = D.complete_subset(train_raw)
        if len(complete) == 0:
            raise PipelineError("augmentation needs at least one complete-case training sample")
        augmented = A.augment_offline(complete, aug)
        variants = augmented.subset(np.arange(len(complete), len(augmented)))
        data = D.concat([data, variants])
    return data


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="kpbench")
def cli():
    """Facial-keypoint regression engine and efficiency benchmark."""


@cli.command()
@click.option("--n", "n", type=int, required=True, help="number of samples")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--missing", type=float, default=0.0, show_default=True,
              help="fraction of rows that lose their non-core landmarks")
@click.option("--out", required=True, help="output training CSV")
def synth(n, seed, missing, out):
    """Render a synthetic keypoint dataset."""
    run = _Run("synth", dict(n=n, seed=seed, missing=missing, out=out), {"seed": seed})
    ds = D.synthesize_dataset(n, seed, missing)
    _ensure_parent(out)
    D.save_training_csv(ds, out)
    run.output(out)
    run.write(out)
    prof = D.null_profile(ds)
    click.echo(f"wrote {prof.total} samples ({prof.complete} complete) to {out}")


@cli.command()
@click.option("--method", type=click.Choice(["forward-fill", "knn"]), required=True)
@click.option("--k", type=int, default=5, show_default=True)
@click.option("--in", "inp", required=True)
@click.option("--out", required=True)
def impute(method, k, inp, out):
    """Fill missing keypoints."""
    run = _Run("impute", dict(method=method, k=k, inp=inp, out=out))
    ds = _load_training(inp)
    run.input(inp)
    filled = I.impute(ds, method, k)
    _ensure_parent(out)
    D.save_training_csv(filled, out)
    run.output(out)
    run.write(out)
    click.echo(f"imputed {D.null_profile(ds).with_missing} incomplete rows with {method}; wrote {out}")


@cli.command()
@click.option("--in", "inp", required=True)
@click.option("--out", required=True)
@click.option("--rot", type=float, default=15.0, show_default=True, help="max rotation, degrees")
@click.option("--shift", type=int, default=8, show_default=True, help="max shift per axis, pixels")
@click.option("--bright", type=float, default=0.3, show_default=True, help="brightness factor spread around 1")
@click.option("--noise", type=float, default=12.0, show_default=True, help="max noise sigma")
@click.option("--variants", type=int, default=4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def augment(inp, out, rot, shift, bright, noise, variants, seed):
    """Augment the complete-case subset offline (originals are kept)."""
    run = _Run("augment", dict(inp=inp, out=out, rot=rot, shift=shift, bright=bright, noise=noise,
                               variants=variants, seed=seed), {"seed": seed})
    ds = _load_training(inp)
    run.input(inp)
    complete = D.complete_subset(ds)
    result = A.augment_offline(complete, _aug_spec(rot, shift, bright, noise, variants, seed))
    _ensure_parent(out)
    D.save_training_csv(result, out)
    run.output(out)
    run.write(out)
    click.echo(f"{len(complete)} complete samples -> {len(result)} samples; wrote {out}")


def _train_options(f):
    opts = [
        click.option("--epochs", type=int, default=100, show_default=True),
        click.option("--batch-size", type=int, default=32, show_default=True),
        click.option("--lr", type=float, default=1e-3, show_default=True),
        click.option("--optimizer", type=click.Choice(["adam", "sgd_momentum"]), default="adam", show_default=True),
        click.option("--val-fraction", type=float, default=0.2, show_default=True),
        click.option("--patience", type=int, default=10, show_default=True, help="0 disables early stopping"),
        click.option("--k", type=int, default=5, show_default=True, help="neighbours for knn imputation"),
        click.option("--rot", type=float, default=15.0, show_default=True),
        click.option("--shift", type=int, default=8, show_default=True),
        click.option("--bright", type=float, default=0.3, show_default=True),
        click.option("--noise", type=float, default=12.0, show_default=True),
        click.option("--variants", type=int, default=4, show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def _config(epochs, batch_size, lr, optimizer, val_fraction, patience, seed) -> TR.TrainConfig:
    return TR.TrainConfig(epochs=epochs, batch_size=batch_size, optimizer=optimizer, learning_rate=lr,
                          seed=seed, validation_fraction=val_fraction, early_stop_patience=patience or None)


def spec_sidecar(weights) -> Path:
    return Path(f"{weights}.json")


def write_sidecar(path, model: M.Model, meta: dict) -> None:
    meta = dict(meta, model_spec=M.spec_to_dict(model.spec))
    spec_sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@cli.command()
@click.option("--model", "model_name", type=click.Choice(sorted(M.BUILDERS)), required=True)
@click.option("--data", required=True)
@click.option("--impute", "impute_method", type=click.Choice(["none", "forward-fill", "knn"]), default="none",
              show_default=True)
@click.option("--augment", "augment_flag", type=click.Choice(["on", "off"]), default="off", show_default=True)
@click.option("--out", required=True, help="weight file")
@click.option("--curve", required=True, help="training-curve CSV")
@_train_options
def train(model_name, data, impute_method, augment_flag, out, curve, epochs, batch_size, lr, optimizer,
          val_fraction, patience, k, rot, shift, bright, noise, variants, seed):
    """Train one model and write its weights and training curve."""
    flags = dict(model=model_name, data=data, impute=impute_method, augment=augment_flag, out=out, curve=curve,
                 epochs=epochs, batch_size=batch_size, lr=lr, optimizer=optimizer, val_fraction=val_fraction,
                 patience=patience, k=k, rot=rot, shift=shift, bright=bright, noise=noise, variants=variants,
                 seed=seed)
    run = _Run("train", flags, {"seed": seed})
    ds = _load_training(data)
    run.input(data)
    cfg = _config(epochs, batch_size, lr, optimizer, val_fraction, patience, seed)
    train_raw, val = TR.split_train_val(ds, cfg.validation_fraction, seed)
    train_set = prepare_training_data(train_raw, impute_method, augment_flag == "on", k,
                                      _aug_spec(rot, shift, bright, noise, variants, seed))
    model = M.build(model_name, seed)
    best, tc = TR.train(model, train_set, cfg, validation=val,
                        on_epoch=lambda r: click.echo(
                            f"epoch {r.epoch:3d}  train_mse {r.train_mse:.5f}  val_rmse {r.val_rmse_px:.3f} px",
                            err=True))
    for p in (out, curve):
        _ensure_parent(p)
    M.save_weights_file(best, out)
    Path(curve).write_text(tc.to_csv(), encoding="utf-8")
    write_sidecar(out, best, dict(model=model_name, impute=impute_method, augment=augment_flag, seed=seed,
                                  best_epoch=tc.best.epoch, val_rmse_px=tc.best.val_rmse_px))
    run.output(out)
    run.output(spec_sidecar(out))
    run.output(curve, timing=True)
    run.write(out)
    click.echo(f"best epoch {tc.best.epoch}: val RMSE {tc.best.val_rmse_px:.3f} px; wrote {out}, {curve}")


@cli.command()
@click.option("--weights", required=True)
@click.option("--data", required=True, help="labelled CSV used for RMSE and timing")
@click.option("--model", "model_name", default=None, help="model name when the weight file has no .json sidecar")
@click.option("--warmup", type=int, default=3, show_default=True)
@click.option("--reps", type=int, default=7, show_default=True)
@click.option("--limit", type=int, default=0, help="time only the first N images (0 = all)")
@click.option("--out", required=True, help="report CSV (an aligned .txt table is written alongside)")
def bench(weights, data, model_name, warmup, reps, limit, out):
    """Parameter count, model size, RMSE and inference time per 100 images."""
    run = _Run("bench", dict(weights=weights, data=data, model=model_name, warmup=warmup, reps=reps,
                             limit=limit, out=out))
    if not Path(weights).is_file():
        raise PipelineError(f"input file not found: {weights}")
    sidecar = spec_sidecar(weights)
    meta = {}
    if sidecar.is_file():
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
        spec = M.spec_from_dict(meta["model_spec"])
    elif model_name:
        spec = M.spec_from_name(model_name)
    else:
        raise PipelineError(f"no spec sidecar {sidecar}; pass --model")
    model = M.load_weights_file(spec, weights)
    run.input(weights)
    ds = _load_training(data)
    run.input(data)
    pred = E.predict_batch(model, ds)
    timed = ds.subset(np.arange(min(limit, len(ds)))) if limit else ds
    timing = E.time_inference(model, timed, warmup, reps)
    counts = M.count_parameters(model)
    row = E.BenchRow(meta.get("model", model_name or spec.name), meta.get("impute", "-"), meta.get("augment", "-"),
                     counts["trainable"], counts["total"], M.model_size_bytes(model), E.rmse(pred, ds.coords),
                     timing.sec_per_100, E.hardware_descriptor(), warmup, reps)
    _ensure_parent(out)
    text = Path(out).with_suffix(".txt")
    E.generate_report([row], out, text)
    run.output(out, timing=True)
    run.output(text, timing=True)
    run.write(out)
    click.echo(E.format_table([row]), nl=False)


@cli.group()
def report():
    """Report utilities."""


@report.command("merge")
@click.argument("reports", nargs=-1, required=True)
@click.option("--out", required=True)
def report_merge(reports, out):
    """Concatenate report CSVs."""
    run = _Run("report merge", dict(reports=list(reports), out=out))
    texts = []
    for r in reports:
        if not Path(r).is_file():
            raise PipelineError(f"input file not found: {r}")
        texts.append(Path(r).read_text(encoding="utf-8"))
        run.input(r)
    rows = E.merge_reports(texts)
    _ensure_parent(out)
    text = Path(out).with_suffix(".txt")
    E.generate_report(rows, out, text)
    run.output(out, timing=True)
    run.output(text, timing=True)
    run.write(out)
    click.echo(E.format_table(rows), nl=False)


@cli.group()
def model():
    """Model inspection."""


@model.command("describe")
@click.argument("name")
def model_describe(name):
    """Print the layer table, parameter counts and weight-file size."""
    try:
        spec = M.spec_from_name(name)
    except M.ModelSpecError as e:
        raise PipelineError(str(e)) from None
    click.echo(M.describe(spec))


def _csv_list(value, allowed, what):
    items = [v.strip() for v in value.split(",") if v.strip()]
    bad = [v for v in items if v not in allowed]
    if bad or not items:
        raise click.BadParameter(f"{what} must be a comma list drawn from {sorted(allowed)}")
    return items


@cli.command()
@click.option("--data", default=None)
@click.option("--models", "models_", default="manual,mobilenetv2", show_default=True)
@click.option("--imputes", default="none,forward-fill,knn", show_default=True)
@click.option("--augment", "augments", default="off,on", show_default=True)
@click.option("--out", default=None, help="report CSV; curves go to <stem>_curves/")
@click.option("--manifest", "manifest_path", default=None, help="take grid flags from a manifest JSON")
@click.option("--warmup", type=int, default=1, show_default=True)
@click.option("--reps", type=int, default=5, show_default=True)
@click.option("--bench-images", type=int, default=100, show_default=True)
@_train_options
def grid(data, models_, imputes, augments, out, manifest_path, warmup, reps, bench_images, epochs, batch_size,
         lr, optimizer, val_fraction, patience, k, rot, shift, bright, noise, variants, seed):
    """Train and benchmark every model x imputation x augmentation cell."""
    flags = dict(data=data, models=models_, imputes=imputes, augment=augments, out=out, warmup=warmup, reps=reps,
                 bench_images=bench_images, epochs=epochs, batch_size=batch_size, lr=lr, optimizer=optimizer,
                 val_fraction=val_fraction, patience=patience, k=k, rot=rot, shift=shift, bright=bright,
                 noise=noise, variants=variants, seed=seed)
    if manifest_path:
        if not Path(manifest_path).is_file():
            raise PipelineError(f"input file not found: {manifest_path}")
        saved = RunManifest.from_json(Path(manifest_path).read_text(encoding="utf-8")).flags
        flags.update({k_: v for k_, v in saved.items() if k_ in flags})
    if not flags["data"] or not flags["out"]:
        raise click.UsageError("grid needs --data and --out (directly or via --manifest)")
    rows, trend = run_grid(**flags)
    click.echo(E.format_table(rows), nl=False)
    for t in trend:
        verdict = "holds" if t.augmentation_helps else "does not hold"
        click.echo(f"trend {t.model}/{t.impute}: aug {t.rmse_aug:.3f} px vs no-aug {t.rmse_no_aug:.3f} px ({verdict})")


def run_grid(data, models, imputes, augment, out, warmup, reps, bench_images, epochs, batch_size, lr, optimizer,
             val_fraction, patience, k, rot, shift, bright, noise, variants, seed):
    model_names = _csv_list(models, set(M.BUILDERS), "--models")
    impute_names = _csv_list(imputes, {"none", "forward-fill", "knn"}, "--imputes")
    aug_names = _csv_list(augment, {"on", "off"}, "--augment")
    run = _Run("grid", dict(data=data, models=models, imputes=imputes, augment=augment, out=out, warmup=warmup,
                            reps=reps, bench_images=bench_images, epochs=epochs, batch_size=batch_size, lr=lr,
                            optimizer=optimizer, val_fraction=val_fraction, patience=patience, k=k, rot=rot,
                            shift=shift, bright=bright, noise=noise, variants=variants, seed=seed),
               {"seed": seed})
    ds = _load_training(data)
    run.input(data)
    cfg = _config(epochs, batch_size, lr, optimizer, val_fraction, patience, seed)
    train_raw, val = TR.split_train_val(ds, cfg.validation_fraction, seed)
    aug = _aug_spec(rot, shift, bright, noise, variants, seed)
    bench_set = val.subset(np.arange(min(bench_images, len(val))))
    hardware = E.hardware_descriptor()

    out = Path(out)
    _ensure_parent(out)
    curve_dir = out.parent / f"{out.stem}_curves"
    curve_dir.mkdir(parents=True, exist_ok=True)
    prepared = {}
    rows = []
    for name in model_names:
        for imp in impute_names:
            for a in aug_names:
                key = (imp, a)
                if key not in prepared:
                    prepared[key] = prepare_training_data(train_raw, imp, a == "on", k, aug)
                model = M.build(name, seed)
                best, tc = TR.train(model, prepared[key], cfg, validation=val)
                curve_path = curve_dir / f"{name}_{imp}_{a}.csv"
                curve_path.write_text(tc.to_csv(), encoding="utf-8")
                run.output(curve_path, timing=True)
                pred = E.predict_batch(best, val)
                timing = E.time_inference(best, bench_set, warmup, reps)
                counts = M.count_parameters(best)
                rows.append(E.BenchRow(name, imp, a, counts["trainable"], counts["total"], M.model_size_bytes(best),
                                       E.rmse(pred, val.coords), timing.sec_per_100, hardware, warmup, reps))
                click.echo(f"{name} impute={imp} augment={a}: rmse {rows[-1].rmse_px:.3f} px, "
                           f"{timing.sec_per_100:.4f} s/100", err=True)
    text = out.with_suffix(".txt")
    trend = E.augmentation_trend(rows)
    trend_path = out.parent / f"{out.stem}_trend.csv"
    E.generate_report(rows, out, text)
    trend_path.write_text(E.trend_to_csv(trend), encoding="utf-8")
    run.output(out, timing=True)
    run.output(text, timing=True)
    run.output(trend_path)
    run.write(out)
    return rows, trend


@cli.command()
@click.argument("manifest_path")
def replay(manifest_path):
    """Re-run the command recorded in a manifest."""
    if not Path(manifest_path).is_file():
        raise PipelineError(f"input file not found: {manifest_path}")
    m = RunManifest.from_json(Path(manifest_path).read_text(encoding="utf-8"))
    code = main(m.argv)
    if code:
        sys.exit(code)


def main(argv=None) -> int:
    """Run the CLI and return an exit code (0 ok, 1 pipeline error, 2 usage error)."""
    global _ARGV
    argv = list(sys.argv[1:] if argv is None else argv)
    saved, _ARGV = _ARGV, argv
    try:
        cli.main(args=argv, prog_name="kpbench", standalone_mode=False)
        return 0
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.UsageError as e:
        e.show()
        return 2
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except (ValueError, RuntimeError, OSError, KeyError) as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        click.echo(f"kpbench: error: {msg}", err=True)
        return 1
    finally:
        _ARGV = saved


def entry() -> None:
    sys.exit(main())
