"""Hyperparameter search: LIPO over a box, scored on a held-back validation split."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .architectures import ModelKind, MultiTaskModel, build_model, predict
from .data import MultiTaskDataset, Scaler, fit_scaler, split
from .lipo import HyperBox, TrialRecord, lipo_minimize
from .training import TrainConfig, TrainingDivergedError, TrainResult, train_with_retry

__all__ = ["SearchResult", "box_for_kind", "fit_config", "hpo_search", "write_trial_log", "rmse"]

log = logging.getLogger(__name__)

ARCH_KEYS = ("hidden_dim", "d_beta", "num_blocks")
TRAIN_KEYS = ("peak_lr", "lambda_alpha", "lambda_beta")


def rmse(a, b) -> float:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.sqrt(np.mean(d ** 2)))


def box_for_kind(box: HyperBox, kind) -> HyperBox:
    """Drop dimensions the architecture does not use (CS has no task parameters)."""
    if ModelKind(kind) is ModelKind.CONTEXT_SENSITIVE:
        return box.subset([n for n in box.names if n not in ("d_beta", "lambda_beta")])
    return box


def fit_config(train: MultiTaskDataset, kind, hyper: dict, base: TrainConfig, seed=0,
               max_retries: int = 10) -> TrainResult:
    """Train one model on an already scaled dataset with the given hyperparameters.

    Keys of ``hyper`` missing from the architecture defaults fall back to
    ``hidden_dim=128``, ``d_beta=2``, ``num_blocks=2``.
    """
    arch = {"hidden_dim": 128, "d_beta": 2, "num_blocks": 2}
    arch.update({k: int(v) for k, v in hyper.items() if k in ARCH_KEYS})
    cfg = replace(base, seed=seed, **{k: float(v) for k, v in hyper.items() if k in TRAIN_KEYS})

    def factory(s):
        return build_model(kind, train.d_x, train.num_tasks, seed=s, **arch)

    return train_with_retry(factory, train, cfg, max_retries=max_retries)


@dataclass
class SearchResult:
    best_config: dict
    best_value: float
    trials: list[TrialRecord]
    box: HyperBox
    model: MultiTaskModel
    scaler: Scaler
    final: TrainResult
    diagnostics: dict = field(default_factory=dict)


def hpo_search(dataset: MultiTaskDataset, kind, box: HyperBox | None = None, seed=0, num_iterations: int = 25,
               base_config: TrainConfig | None = None, fixed: dict | None = None,
               validation_fraction: float = 0.2) -> SearchResult:
    """Search hyperparameters, then retrain the best configuration on all of ``dataset``.

    ``dataset`` is in original units.  Each trial trains on a per-task
    stratified part of the data and is scored by validation RMSE in original
    units; a trial whose every retry diverges counts as diverged.
    ``fixed`` supplies values for hyperparameters outside the box.
    """
    kind = ModelKind(kind)
    base = base_config or TrainConfig()
    box = box_for_kind(box or HyperBox.default(dataset.num_tasks), kind)
    fixed = dict(fixed or {})
    scaler = fit_scaler(dataset)
    part, valid = split(dataset, 1.0 - validation_fraction, seed=seed)
    part_s = scaler.transform(part)
    Xv = scaler.transform_X(valid.X)
    trial_seeds = np.random.default_rng(seed).integers(0, 2**31 - 1, size=num_iterations)
    counter = iter(range(num_iterations))

    def objective(x) -> float:
        i = next(counter, num_iterations - 1)
        hyper = {**fixed, **box.as_dict(x)}
        try:
            res = fit_config(part_s, kind, hyper, base, seed=int(trial_seeds[i]))
        except TrainingDivergedError:
            log.info("trial %d diverged: %s", i, hyper)
            return math.nan
        pred = scaler.inverse_y(predict(res.model, Xv, valid.tasks))
        value = rmse(pred, valid.y)
        log.info("trial %d: %s -> %.5g", i, hyper, value)
        return value

    search = lipo_minimize(objective, box, num_iterations, seed=seed)
    if all(t.diverged for t in search.trials):
        raise TrainingDivergedError("every hyperparameter trial diverged", len(search.trials))
    best = {**fixed, **box.as_dict(search.x)}
    final = fit_config(scaler.transform(dataset), kind, best, base, seed=seed)
    return SearchResult(best, float(search.fun), search.trials, box, final.model, scaler, final,
                        {"num_trials": len(search.trials), "lipschitz": search.lipschitz,
                         "validation_fraction": validation_fraction})


def write_trial_log(trials, box: HyperBox, path) -> None:
    """CSV with one row per trial: index, point coordinates, value, diverged flag."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", *box.names, "value", "diverged", "kind"])
        for t in trials:
            point = box.as_dict(t.point)
            w.writerow([t.index, *(point[n] for n in box.names), repr(float(t.value)), int(t.diverged), t.kind])
