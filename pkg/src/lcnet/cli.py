"""Command-line harness: ``lcnet <verb> [--config FILE] [overrides]``."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .architectures import load_bundle, predict, save_bundle
from .data import CsvSchema, MultiTaskDataset, load_csv, write_csv
from .experiments import ExperimentConfig, PartialResultError, fit_model, load_dataset, run_experiment, write_rows
from .hpo import rmse


def _config(config_path, experiment, **overrides) -> ExperimentConfig:
    doc = json.loads(Path(config_path).read_text()) if config_path else {}
    doc["experiment"] = experiment
    for key, value in overrides.items():
        if value is None or value == ():
            continue
        if key == "dataset":
            doc["dataset"] = {**doc.get("dataset", {}), "generator": value}
        elif key in ("models", "dims", "fractions"):
            doc[key] = list(value)
        elif key in ("hyper", "train"):
            doc[key] = {**doc.get(key, {}), **value}
        else:
            doc[key] = value
    return ExperimentConfig.from_dict(doc)


def _pairs(values) -> dict:
    out = {}
    for item in values:
        key, _, raw = item.partition("=")
        if not _:
            raise click.BadParameter(f"expected KEY=VALUE, got {item!r}")
        out[key] = json.loads(raw)
    return out


def common(f):
    opts = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                     help="JSON experiment config; flags override its fields."),
        click.option("--dataset", type=click.Choice(["frequency", "sine-line"]), help="Synthetic generator."),
        click.option("--model", "models", multiple=True, type=click.Choice(["lc", "cs", "ll", "lme"])),
        click.option("--set", "hyper", multiple=True, help="Fixed hyperparameter KEY=VALUE (JSON value)."),
        click.option("--train-set", "train", multiple=True, help="Training option KEY=VALUE (JSON value)."),
        click.option("--no-search", is_flag=True, default=None, help="Skip hyperparameter search."),
        click.option("--iterations", "num_iterations", type=int, help="Search iterations."),
        click.option("--out", "output_dir", type=click.Path(file_okay=False), help="Output directory."),
        click.option("--seed", type=int),
        click.option("--jobs", type=int, help="Worker processes for independent runs."),
        click.option("--paper-scale", is_flag=True, default=None, help="Full-size data and schedules."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _run(experiment, config_path, no_search=None, hyper=(), train=(), **kw):
    cfg = _config(config_path, experiment, search=None if no_search is None else not no_search,
                  hyper=_pairs(hyper), train=_pairs(train), **kw)
    try:
        result = run_experiment(cfg)
    except PartialResultError as exc:
        raise click.ClickException(f"{exc}; partial results in {cfg.output_dir}") from exc
    click.echo(f"wrote {cfg.output_dir}")
    for row in result.rows[:50]:
        click.echo("  " + ", ".join(f"{k}={_fmt(v)}" for k, v in row.items()))
    return result


def _fmt(v):
    return f"{v:.5g}" if isinstance(v, float) else str(v)


@click.group()
@click.option("-v", "--verbose", count=True, help="Log progress (repeat for debug output).")
def main(verbose):
    """Multi-task regression with learned-context networks."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(message)s")


@main.command()
@click.option("--dataset", type=click.Choice(["frequency", "sine-line"]), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--paper-scale", is_flag=True)
@click.option("--num-tasks", type=int)
@click.option("--n-train", type=int)
@click.option("--n-test", type=int)
def generate(dataset, out_dir, seed, paper_scale, num_tasks, n_train, n_test):
    """Write a synthetic dataset as train.csv, test.csv and schema.json."""
    spec = {"generator": dataset}
    for k, v in (("num_tasks", num_tasks), ("n_train", n_train), ("n_test", n_test)):
        if v is not None:
            spec[k] = v
    train, test, truth = load_dataset(spec, seed, paper_scale)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    schema = write_csv(train, out / "train.csv")
    write_csv(test, out / "test.csv")
    (out / "schema.json").write_text(json.dumps(schema.to_dict(), indent=2))
    (out / "truth.json").write_text(json.dumps({k: (v.tolist() if isinstance(v, np.ndarray) else v)
                                                 for k, v in vars(truth).items()}, indent=2))
    click.echo(f"wrote {len(train)} train / {len(test)} test rows to {out}")


def _csv_dataset(csv_path, schema_path, dataset, seed, paper_scale):
    if csv_path:
        if not schema_path:
            raise click.UsageError("--csv needs --schema")
        return load_csv(csv_path, CsvSchema.load(schema_path)), None
    train, _, _ = load_dataset({"generator": dataset or "frequency"}, seed, paper_scale)
    return train, None


@main.command()
@click.option("--model", "kind", type=click.Choice(["lc", "cs", "ll", "lme"]), default="lc")
@click.option("--csv", "csv_path", type=click.Path(exists=True, dir_okay=False), help="Training CSV.")
@click.option("--schema", "schema_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--dataset", type=click.Choice(["frequency", "sine-line"]), help="Synthetic data instead of CSV.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--set", "hyper", multiple=True, help="Hyperparameter KEY=VALUE.")
@click.option("--train-set", "train", multiple=True, help="Training option KEY=VALUE.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--paper-scale", is_flag=True)
def train(kind, csv_path, schema_path, dataset, config_path, hyper, train, out_dir, seed, paper_scale):
    """Train one model with fixed hyperparameters and save a model bundle."""
    cfg = _config(config_path, "base", hyper=_pairs(hyper), train=_pairs(train), seed=seed,
                  paper_scale=paper_scale or None, search=False)
    data, _ = _csv_dataset(csv_path, schema_path, dataset, seed, paper_scale)
    fitted = fit_model(data, kind, cfg, search=False)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if kind == "lme":
        m = fitted.model
        (out / "model.json").write_text(json.dumps({
            "format": "lcnet.lme", "slope": m.slope.tolist(), "intercept": m.intercept,
            "task_intercepts": m.task_intercepts.tolist(), "sigma_eps2": m.sigma_eps2,
            "sigma_beta2": m.sigma_beta2}))
    else:
        save_bundle(out / "model.json", fitted.model, fitted.scaler,
                    {"hyper": fitted.hyper, "task_labels": [str(t) for t in data.task_labels],
                     "feature_names": list(data.feature_names)})
        write_rows([{"epoch": e, "lr": lr, "train_loss": loss, "converged_flag": int(c)}
                    for e, lr, loss, c in fitted.history], out / "history.csv")
    (out / "diagnostics.json").write_text(json.dumps(fitted.diagnostics, indent=2, default=float))
    click.echo(f"trained {kind} on {len(data)} rows; bundle in {out / 'model.json'}")


@main.command()
@click.option("--bundle", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--csv", "csv_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--schema", "schema_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--predictions", type=click.Path(dir_okay=False), help="Optional CSV of predictions.")
def evaluate(bundle, csv_path, schema_path, predictions):
    """Test RMSE of a saved network bundle on a CSV file (original units)."""
    model, scaler, extra = load_bundle(bundle)
    ref = None
    if extra.get("task_labels"):
        ref = MultiTaskDataset(np.zeros(0, dtype=np.int64), np.zeros((0, model.d_x)), np.zeros(0),
                               model.num_tasks, extra["task_labels"], extra.get("feature_names", []))
    ds = load_csv(csv_path, CsvSchema.load(schema_path), reference=ref)
    if ds.num_tasks > model.num_tasks:
        raise click.ClickException("CSV contains more tasks than the model was trained on")
    pred = scaler.inverse_y(predict(model, scaler.transform_X(ds.X), ds.tasks))
    err = rmse(pred, ds.y)
    if predictions:
        with open(predictions, "w") as fh:
            fh.write("task,y,prediction\n")
            for t, y, p in zip(ds.tasks, ds.y, pred):
                fh.write(f"{int(t)},{float(y)!r},{float(p)!r}\n")
    click.echo(json.dumps({"rmse": err, "n": len(ds), "response_std": float(np.std(ds.y))}))


@main.command()
@click.option("--model", "kind", type=click.Choice(["lc", "cs", "ll"]), default="lc")
@click.option("--dataset", type=click.Choice(["frequency", "sine-line"]))
@click.option("--csv", "csv_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--schema", "schema_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--iterations", "num_iterations", type=int)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--paper-scale", is_flag=True)
def hpo(kind, dataset, csv_path, schema_path, config_path, num_iterations, out_dir, seed, paper_scale):
    """Hyperparameter search; writes trials.csv, best_config.json and the final bundle."""
    cfg = _config(config_path, "base", seed=seed, num_iterations=num_iterations,
                  paper_scale=paper_scale or None, search=True)
    data, _ = _csv_dataset(csv_path, schema_path, dataset, seed, paper_scale)
    fitted = fit_model(data, kind, cfg, search=True)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "best_config.json").write_text(json.dumps(fitted.hyper, indent=2))
    write_rows(fitted.trials, out / "trials.csv")
    save_bundle(out / "model.json", fitted.model, fitted.scaler, {"hyper": fitted.hyper})
    click.echo(json.dumps(fitted.hyper))


@main.command()
@common
@click.option("--repeats", type=int)
def repeat(**kw):
    """Repeated training with fresh seeds (min/max relative RMSE)."""
    _run("repeat", **kw)


@main.command()
@common
@click.option("--fraction", "fractions", multiple=True, type=float)
def datasize(**kw):
    """Train on balanced subsamples of the training data."""
    _run("datasize", **kw)


@main.command()
@common
@click.option("--dim", "dims", multiple=True, type=int)
def dbeta(**kw):
    """Sweep the number of task parameters for LC and LL."""
    _run("dbeta-sweep", **kw)


@main.command()
@common
@click.option("--dim", "dims", multiple=True, type=int)
@click.option("--budget", "holdout_budget", type=int, help="LIPO evaluations per task (default 25 per dimension).")
def holdout(**kw):
    """Three-fold hold-out task adaptation."""
    _run("holdout", **kw)


@main.command()
@common
@click.option("--omega", "scan_omega", type=float)
def scan(**kw):
    """Task-parameter likelihood scan for a new frequency task."""
    _run("likelihood-scan", **kw)


@main.command()
@common
def base(**kw):
    """Search and train every model kind; report test RMSE."""
    _run("base", **kw)


@main.command()
@click.option("--out", "output_dir", type=click.Path(file_okay=False), default="runs/construct")
@click.option("--perturb", "perturbation", type=float, default=0.0, help="Add this to every constructed weight.")
def construct(output_dir, perturbation):
    """Check the hand-built networks; exit status 1 if any check fails."""
    cfg = ExperimentConfig(experiment="construct-verify", output_dir=output_dir, perturbation=perturbation)
    result = run_experiment(cfg)
    for c in result.rows:
        status = "PASS" if c["passed"] else "FAIL"
        click.echo(f"{status} {c['check']}: max deviation {c['max_deviation']:.3g} (tol {c['tolerance']:.0e})")
    sys.exit(0 if result.passed else 1)


if __name__ == "__main__":
    main()
