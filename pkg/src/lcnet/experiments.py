"""Experiment drivers behind the command-line harness.

Every driver takes an :class:`ExperimentConfig`, returns an
:class:`ExperimentResult` and, through :func:`write_outputs`, leaves
``config.json``, ``results.csv``, ``diagnostics.json`` and ``trials.csv`` in
the output directory.  All randomness derives from ``config.seed``.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .architectures import predict, predict_with_beta
from .constructions import run_checks
from .data import (
    CsvSchema,
    MultiTaskDataset,
    fit_scaler,
    frequency_function,
    gen_frequency,
    gen_sine_line,
    load_csv,
    split,
    split_task_groups,
    subsample_balanced,
)
from .holdout import estimate_prior, fit_holdout_task, likelihood_scan, mode_indices, search_bounds
from .hpo import fit_config, hpo_search, rmse
from .lipo import Dimension, HyperBox
from .lme import lme_fit, lme_predict
from .training import TrainConfig

__all__ = [
    "EXPERIMENTS",
    "DATASETS",
    "ExperimentConfig",
    "ExperimentResult",
    "FittedModel",
    "load_dataset",
    "fit_model",
    "run_base",
    "run_repeat",
    "run_datasize",
    "run_dbeta_sweep",
    "run_holdout",
    "run_likelihood_scan",
    "run_construct_verify",
    "scan_new_task",
    "run_experiment",
    "PartialResultError",
    "write_outputs",
    "write_rows",
]

log = logging.getLogger(__name__)

EXPERIMENTS = ("base", "repeat", "datasize", "dbeta-sweep", "holdout", "likelihood-scan", "construct-verify")
MODEL_KINDS = ("lc", "cs", "ll", "lme")

# desk-scale sizes; paper scale in DATASETS_PAPER
DATASETS = {
    "frequency": {"generator": "frequency", "num_tasks": 100, "n_train": 12000, "n_test": 10000, "sigma": 0.1},
    "sine-line": {"generator": "sine-line", "num_tasks": 50, "n_train": 3000, "n_test": 5000, "sigma": 0.3},
}
DATASETS_PAPER = {
    "frequency": {"generator": "frequency", "num_tasks": 250, "n_train": 30000, "n_test": 25000, "sigma": 0.1},
    "sine-line": {"generator": "sine-line", "num_tasks": 100, "n_train": 6000, "n_test": 10000, "sigma": 0.3},
}


@dataclass
class ExperimentConfig:
    experiment: str = "base"
    dataset: dict = field(default_factory=lambda: {"generator": "frequency"})
    models: list = field(default_factory=lambda: ["lc", "cs", "ll", "lme"])
    train: dict = field(default_factory=dict)  # TrainConfig overrides
    box: dict = field(default_factory=dict)  # HyperBox overrides, name -> {low, high, log, integer}
    hyper: dict = field(default_factory=dict)  # fixed hyperparameters
    search: bool = True
    num_iterations: int = 25
    repeats: int = 5
    fractions: list = field(default_factory=lambda: [1.0, 0.5, 0.1])
    dims: list = field(default_factory=lambda: [1, 2, 4, 8, 16])
    holdout_fractions: list = field(default_factory=lambda: [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0])
    holdout_budget: int | None = None  # LIPO evaluations per hold-out task; None means 25 * d_beta
    scan_omega: float = 1.5
    scan_points: int = 4
    scan_grid: int = 801
    perturbation: float = 0.0
    output_dir: str = "runs/experiment"
    seed: int = 0
    jobs: int = 1
    paper_scale: bool = False

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}")
        bad = [m for m in self.models if m not in MODEL_KINDS]
        if bad:
            raise ValueError(f"unknown model kinds {bad}")
        if self.experiment != "construct-verify" and not self.models:
            raise ValueError("no models selected")
        if self.experiment == "construct-verify":
            return
        ds = self.dataset
        if "generator" in ds:
            if ds["generator"] not in DATASETS:
                raise ValueError(f"unknown generator {ds['generator']!r}")
        elif "csv" not in ds or "schema" not in ds:
            raise ValueError("dataset needs either 'generator' or both 'csv' and 'schema'")
        if self.holdout_budget is not None and self.holdout_budget < 1:
            raise ValueError("holdout_budget must be positive")
        if self.num_iterations < 1 or self.repeats < 1 or self.jobs < 1:
            raise ValueError("num_iterations, repeats and jobs must be positive")
        for f in list(self.fractions) + list(self.holdout_fractions):
            if not 0 < f <= 1:
                raise ValueError("fractions must lie in (0, 1]")
        if self.experiment in ("dbeta-sweep", "holdout") and not self.dims:
            raise ValueError("dims must not be empty")
        if self.experiment in ("holdout", "likelihood-scan") and "generator" in ds and "lc" not in self.models:
            raise ValueError("hold-out experiments need the 'lc' model")
        if self.experiment == "likelihood-scan" and ds.get("generator") != "frequency":
            raise ValueError("the likelihood scan uses the frequency generator")
        TrainConfig(**self.train)  # type check overrides early

    def train_config(self, n: int) -> TrainConfig:
        if self.paper_scale:
            return TrainConfig.for_dataset_size(n, **self.train)
        return TrainConfig(**{"max_epochs": 2000, "batches_per_epoch": 2, **self.train})

    def hyperbox(self, num_tasks: int) -> HyperBox:
        box = HyperBox.default(num_tasks, hidden_max=500 if self.paper_scale else 200)
        dims = {d.name: d for d in box.dims}
        for name, spec in self.box.items():
            if spec is None:
                dims.pop(name, None)
            else:
                dims[name] = Dimension(name, **spec)
        for name in self.hyper:  # fixed values leave the search
            dims.pop(name, None)
        return HyperBox(dims.values())


@dataclass
class ExperimentResult:
    experiment: str
    rows: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    trials: list = field(default_factory=list)
    extra_tables: dict = field(default_factory=dict)  # file name -> rows

    @property
    def passed(self) -> bool:
        return bool(self.diagnostics.get("passed", True))


# --- data -------------------------------------------------------------------


def load_dataset(spec: dict, seed=0, paper_scale: bool = False):
    """Returns ``(train, test, truth)``; ``truth`` holds generator task parameters or None."""
    spec = dict(spec)
    if "generator" in spec:
        name = spec.pop("generator")
        args = {**(DATASETS_PAPER if paper_scale else DATASETS)[name], **spec}
        args.pop("generator")
        args.setdefault("seed", seed)
        gen = gen_frequency if name == "frequency" else gen_sine_line
        return gen(**args)
    schema = spec["schema"]
    schema = CsvSchema.load(schema) if isinstance(schema, (str, Path)) else CsvSchema.from_dict(schema)
    train = load_csv(spec["csv"], schema)
    if spec.get("test_csv"):
        test = load_csv(spec["test_csv"], schema, reference=train)
    else:
        train, test = split(train, 0.8, seed=seed)
    return train, test, None


# --- fitting ----------------------------------------------------------------


@dataclass
class FittedModel:
    kind: str
    model: object
    scaler: object = None
    hyper: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    trials: list = field(default_factory=list)
    history: list = field(default_factory=list)

    def predict(self, X, tasks) -> np.ndarray:
        if self.kind == "lme":
            return lme_predict(self.model, X, tasks)
        return self.scaler.inverse_y(predict(self.model, self.scaler.transform_X(X), tasks))


def fit_model(train: MultiTaskDataset, kind: str, cfg: ExperimentConfig, hyper: dict | None = None,
              seed=None, search: bool | None = None) -> FittedModel:
    """Fit one model kind, either by hyperparameter search or with fixed hyperparameters."""
    seed = cfg.seed if seed is None else seed
    hyper = {**cfg.hyper, **(hyper or {})}
    start = time.perf_counter()
    if kind == "lme":
        model = lme_fit(train)
        return FittedModel("lme", model, diagnostics={**model.diagnostics, "wall_time": time.perf_counter() - start})
    base = cfg.train_config(len(train))
    search = cfg.search if search is None else search
    if search:
        res = hpo_search(train, kind, cfg.hyperbox(train.num_tasks), seed=seed, num_iterations=cfg.num_iterations,
                         base_config=base, fixed=hyper)
        trials = [{"model": kind, "trial": t.index, **res.box.as_dict(t.point), "value": t.value,
                   "diverged": int(t.diverged), "step": t.kind} for t in res.trials]
        diag = {**res.final.diagnostics, **res.diagnostics, "best_validation_rmse": res.best_value}
        return FittedModel(kind, res.model, res.scaler, res.best_config, _clean(diag), trials, res.final.history)
    scaler = fit_scaler(train)
    result = fit_config(scaler.transform(train), kind, hyper, base, seed=seed)
    return FittedModel(kind, result.model, scaler, hyper, _clean(result.diagnostics), history=result.history)


def _clean(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.floating, np.integer)):
            v = v.item()
        out[k] = v
    return out


def _score(fitted: FittedModel, test: MultiTaskDataset) -> float:
    return rmse(fitted.predict(test.X, test.tasks), test.y)


def _row(**kw) -> dict:
    if "rmse" in kw and "denominator" in kw:
        kw["normalized_rmse"] = kw["rmse"] / kw["denominator"]
    return kw


# --- drivers ----------------------------------------------------------------


def run_base(cfg: ExperimentConfig, data=None) -> ExperimentResult:
    train, test, _ = data or load_dataset(cfg.dataset, cfg.seed, cfg.paper_scale)
    den = float(np.std(test.y))
    result = ExperimentResult("base", diagnostics={"denominator": "test response std", "response_std": den})
    for kind in cfg.models:
        fitted = _guard(result, fit_model, train, kind, cfg)
        result.rows.append(_row(model=kind, rmse=_score(fitted, test), denominator=den,
                                retries=fitted.diagnostics.get("retries", 0)))
        result.diagnostics[kind] = {"hyper": fitted.hyper, **fitted.diagnostics}
        result.trials += fitted.trials
    return result


def _repeat_one(train, test, kind, cfg, hyper, seed):
    fitted = fit_model(train, kind, cfg, hyper=hyper, seed=seed, search=False)
    return {"model": kind, "seed": seed, "rmse": _score(fitted, test),
            "retries": fitted.diagnostics.get("retries", 0)}


def run_repeat(cfg: ExperimentConfig, data=None) -> ExperimentResult:
    """Retrain with fresh seeds and fixed hyperparameters.

    Hyperparameters come from ``cfg.hyper``; with ``cfg.search`` a search is
    run first and its best configuration is reused.  RMSE values are reported
    relative to the run with ``seed = cfg.seed``.
    """
    train, test, _ = data or load_dataset(cfg.dataset, cfg.seed, cfg.paper_scale)
    result = ExperimentResult("repeat")
    kinds = [k for k in cfg.models if k != "lme"]
    for kind in kinds:
        hyper = dict(cfg.hyper)
        if cfg.search:
            fitted = _guard(result, fit_model, train, kind, cfg)
            hyper, result.trials = fitted.hyper, result.trials + fitted.trials
        seeds = [cfg.seed + r for r in range(cfg.repeats)]
        runs = _guard(result, Parallel(n_jobs=cfg.jobs),
                      (delayed(_repeat_one)(train, test, kind, cfg, hyper, s) for s in seeds))
        ref = runs[0]["rmse"]
        for r, run in enumerate(runs):
            result.rows.append(_row(repeat=r, **run, denominator=ref))
        values = np.array([r["rmse"] for r in runs])
        result.diagnostics[kind] = {
            "hyper": hyper,
            "min_relative": float(values.min() / ref),
            "max_relative": float(values.max() / ref),
            "max_over_min": float(values.max() / values.min()),
            "divergences": int(sum(r["retries"] for r in runs)),
        }
    return result


def run_datasize(cfg: ExperimentConfig, data=None) -> ExperimentResult:
    train, test, _ = data or load_dataset(cfg.dataset, cfg.seed, cfg.paper_scale)
    den = float(np.std(test.y))
    result = ExperimentResult("datasize", diagnostics={"denominator": "test response std", "response_std": den})
    for frac in cfg.fractions:
        sub = train if frac == 1.0 else subsample_balanced(train, frac, seed=cfg.seed)
        for kind in cfg.models:
            fitted = _guard(result, fit_model, sub, kind, cfg)
            result.rows.append(_row(fraction=frac, model=kind, n_train=len(sub), rmse=_score(fitted, test),
                                    denominator=den))
            result.trials += [{"fraction": frac, **t} for t in fitted.trials]
    return result


def run_dbeta_sweep(cfg: ExperimentConfig, data=None) -> ExperimentResult:
    """LC and LL at every task-parameter dimension, other hyperparameters held fixed."""
    train, test, _ = data or load_dataset(cfg.dataset, cfg.seed, cfg.paper_scale)
    den = float(np.std(test.y))
    result = ExperimentResult("dbeta-sweep", diagnostics={"denominator": "test response std", "response_std": den})
    jobs = [(kind, int(d)) for d in cfg.dims for kind in cfg.models if kind in ("lc", "ll")]

    def one(kind, d):
        fitted = fit_model(train, kind, cfg, hyper={"d_beta": d}, search=False)
        return _row(d_beta=d, model=kind, rmse=_score(fitted, test), denominator=den,
                    retries=fitted.diagnostics.get("retries", 0))

    result.rows = Parallel(n_jobs=cfg.jobs)(delayed(one)(k, d) for k, d in jobs)
    return result


def _holdout_fold(train, test, cfg, d_beta, fold, group, base_ids):
    base_train = train.select_tasks(base_ids)
    base_test = test.select_tasks(base_ids)
    fitted = fit_model(base_train, "lc", cfg, hyper={"d_beta": d_beta}, search=False, seed=cfg.seed + fold)
    model, scaler = fitted.model, fitted.scaler
    resid = scaler.transform_y(base_test.y) - predict(model, scaler.transform_X(base_test.X), base_test.tasks)
    prior = estimate_prior(model.tasks.beta, resid)
    base_rmse = float(np.sqrt(np.mean(resid ** 2))) * scaler.y_scale
    rng = np.random.default_rng([cfg.seed, fold, d_beta])
    rows, fits = [], []
    for task in group:
        tr = train.select_tasks([task])
        te = test.select_tasks([task])
        order = rng.permutation(len(tr))  # nested subsets across fractions
        Xs, ys = scaler.transform_X(tr.X), scaler.transform_y(tr.y)
        for frac in cfg.holdout_fractions:
            k = max(1, int(round(frac * len(tr))))
            idx = order[:k]
            fit = fit_holdout_task(model, Xs[idx], ys[idx], prior, budget=cfg.holdout_budget,
                                   seed=int(rng.integers(2**31)))
            pred = scaler.inverse_y(predict_with_beta(model, scaler.transform_X(te.X), fit.beta))
            err = rmse(pred, te.y)
            rows.append({"d_beta": d_beta, "fold": fold, "task": int(task), "fraction": frac, "n_points": k,
                         "rmse": err, "base_rmse": base_rmse})
            fits.append({"d_beta": d_beta, "fold": fold, "task": int(task), "fraction": frac,
                         "beta_hat": fit.beta.tolist(), "objective": fit.objective,
                         "evaluations": fit.evaluations, "test_rmse": err})
    return rows, fits, {"d_beta": d_beta, "fold": fold, "base_rmse": base_rmse, "s2": prior.s2,
                        "D": prior.D.tolist(), "retries": fitted.diagnostics.get("retries", 0)}


def run_holdout(cfg: ExperimentConfig, data=None) -> ExperimentResult:
    """Three-fold task rotation: train on two groups, adapt to each task of the third.

    Per-task test RMSE is averaged uniformly over all held-out tasks and
    normalized by the mean base-group test RMSE of the fold models.
    """
    train, test, _ = data or load_dataset(cfg.dataset, cfg.seed, cfg.paper_scale)
    groups = split_task_groups(train.num_tasks, 3, seed=cfg.seed)
    jobs = []
    for d in cfg.dims:
        for fold, group in enumerate(groups):
            base_ids = np.sort(np.concatenate([g for i, g in enumerate(groups) if i != fold]))
            jobs.append((int(d), fold, group, base_ids))
    out = Parallel(n_jobs=cfg.jobs)(delayed(_holdout_fold)(train, test, cfg, *j) for j in jobs)
    task_rows = [r for rows, _, _ in out for r in rows]
    fits = [f for _, fs, _ in out for f in fs]
    folds = [f for _, _, f in out]
    result = ExperimentResult("holdout", diagnostics={
        "denominator": "mean base-group test RMSE over folds", "folds": folds,
        "group_sizes": [len(g) for g in groups]})
    for d in cfg.dims:
        den = float(np.mean([f["base_rmse"] for f in folds if f["d_beta"] == d]))
        for frac in cfg.holdout_fractions:
            errs = [r["rmse"] for r in task_rows if r["d_beta"] == d and r["fraction"] == frac]
            result.rows.append(_row(d_beta=int(d), fraction=frac, num_tasks=len(errs), rmse=float(np.mean(errs)),
                                    denominator=den))
    result.extra_tables["holdout_tasks.csv"] = task_rows
    result.extra_tables["holdout_fits.json"] = fits
    return result


def scan_new_task(model, scaler, prior, omega: float, num_points: int = 4, grid_size: int = 801,
                  sigma: float = 0.1, seed=0, include_prior: bool = False) -> dict:
    """Likelihood scans for a new frequency task observed at 1..num_points points.

    The likelihood is scaled by the prior's ``s2``; ``include_prior`` turns
    the curves into posteriors.  The reference parameter is the fit to 2000
    noise-free points of the task.  Returns the grid, one density curve per
    point count, mode counts and whether the mode nearest the reference holds
    the global maximum.
    """
    if model.d_beta != 1:
        raise ValueError("scans need a model with one task parameter")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=num_points)
    y = frequency_function(x, omega) + rng.normal(0.0, sigma, size=num_points)
    lo, hi = search_bounds(model.tasks.beta)
    grid = np.linspace(lo[0], hi[0], grid_size)

    xr = np.linspace(0.0, 1.0, 2000)
    Xr, yr = scaler.transform_X(xr[:, None]), scaler.transform_y(frequency_function(xr, omega))
    dense = np.array([np.mean((yr - predict_with_beta(model, Xr, [b])) ** 2) for b in grid])
    reference = float(grid[int(np.argmin(dense))])

    curves, modes, nearest_is_global = {}, [], []
    for k in range(1, num_points + 1):
        Xs = scaler.transform_X(x[:k, None])
        ys = scaler.transform_y(y[:k])
        c = likelihood_scan(model, Xs, ys, prior, grid, include_prior=include_prior)
        curves[k] = c
        peaks = mode_indices(c)
        if len(peaks) == 0:
            peaks = np.array([int(np.argmax(c))])
        modes.append(len(peaks))
        near = peaks[int(np.argmin(np.abs(grid[peaks] - reference)))]
        nearest_is_global.append(bool(c[near] >= c.max()))
    return {"grid": grid, "curves": curves, "modes": modes, "reference_beta": reference,
            "nearest_is_global": nearest_is_global, "x": x, "y": y}


def run_likelihood_scan(cfg: ExperimentConfig, data=None, fitted: FittedModel | None = None) -> ExperimentResult:
    train, test, truth = data or load_dataset(cfg.dataset, cfg.seed, cfg.paper_scale)
    if fitted is None:
        fitted = fit_model(train, "lc", cfg, hyper={"d_beta": 1}, search=False)
    model, scaler = fitted.model, fitted.scaler
    resid = scaler.transform_y(test.y) - predict(model, scaler.transform_X(test.X), test.tasks)
    prior = estimate_prior(model.tasks.beta, resid)
    sigma = truth.sigma if truth is not None else 0.1
    scan = scan_new_task(model, scaler, prior, cfg.scan_omega, cfg.scan_points, cfg.scan_grid, sigma, cfg.seed)
    result = ExperimentResult("likelihood-scan", diagnostics={
        "omega": cfg.scan_omega, "reference_beta": scan["reference_beta"], "s2": prior.s2,
        "D": prior.D.tolist(), "x": scan["x"].tolist(), "y": scan["y"].tolist()})
    for k, c in scan["curves"].items():
        result.rows.append({"points": k, "modes": scan["modes"][k - 1],
                            "argmax_beta": float(scan["grid"][int(np.argmax(c))]),
                            "nearest_mode_is_global": int(scan["nearest_is_global"][k - 1])})
    result.extra_tables["scan.csv"] = [
        {"beta": float(b), **{f"density_{k}": float(c[i]) for k, c in scan["curves"].items()}}
        for i, b in enumerate(scan["grid"])
    ]
    result.extra_tables["task_parameters.csv"] = [
        {"task": j + 1, "beta": float(b[0]), **({"omega": float(truth.omega[j])} if truth is not None else {})}
        for j, b in enumerate(model.tasks.beta)
    ]
    return result


def run_construct_verify(cfg: ExperimentConfig, data=None) -> ExperimentResult:
    checks = run_checks(perturbation=cfg.perturbation, seed=cfg.seed)
    passed = all(c["passed"] for c in checks)
    return ExperimentResult("construct-verify", rows=checks, diagnostics={"passed": passed,
                                                                           "perturbation": cfg.perturbation})


DRIVERS = {
    "base": run_base,
    "repeat": run_repeat,
    "datasize": run_datasize,
    "dbeta-sweep": run_dbeta_sweep,
    "holdout": run_holdout,
    "likelihood-scan": run_likelihood_scan,
    "construct-verify": run_construct_verify,
}


class PartialResultError(RuntimeError):
    """A driver failed part-way; ``partial`` holds the rows finished before the failure."""

    def __init__(self, message, partial: ExperimentResult):
        super().__init__(message)
        self.partial = partial


def _guard(result: ExperimentResult, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except Exception as exc:
        result.diagnostics["error"] = f"{type(exc).__name__}: {exc}"
        raise PartialResultError(str(exc), result) from exc


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Run the configured driver and write its outputs.

    If the driver fails after producing some rows, those rows are written
    (with the error in ``diagnostics.json``) before the error propagates.
    """
    cfg.validate()
    start = time.perf_counter()
    try:
        result = DRIVERS[cfg.experiment](cfg)
    except PartialResultError as exc:
        if write:
            exc.partial.diagnostics["seed"] = cfg.seed
            write_outputs(exc.partial, cfg, cfg.output_dir)
        raise
    result.diagnostics["wall_time"] = time.perf_counter() - start
    result.diagnostics["seed"] = cfg.seed
    if write:
        write_outputs(result, cfg, cfg.output_dir)
    return result


def write_rows(rows, path) -> None:
    names: list[str] = []
    for r in rows:
        names += [k for k in r if k not in names]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=names)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_outputs(result: ExperimentResult, cfg: ExperimentConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    write_rows(result.rows, out / "results.csv")
    write_rows(result.trials, out / "trials.csv")
    (out / "diagnostics.json").write_text(json.dumps(result.diagnostics, indent=2, default=_json_default))
    for name, table in result.extra_tables.items():
        if name.endswith(".json"):
            (out / name).write_text(json.dumps(table, indent=2, default=_json_default))
        else:
            write_rows(table, out / name)
    return out
