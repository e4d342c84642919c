"""Regularized MSE training with SGD + momentum and a two-stage learning-rate schedule."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .architectures import ModelKind, MultiTaskModel, loss_gradients, predict
from .data import MultiTaskDataset
from .network import l2_penalty

__all__ = [
    "TrainConfig",
    "LRSchedule",
    "MomentumState",
    "TrainResult",
    "TrainingDivergedError",
    "mtl_loss",
    "sgd_step",
    "convergence_test",
    "train",
    "train_with_retry",
    "write_history",
    "write_diagnostics",
]

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Every retry of a training run diverged."""

    def __init__(self, message, attempts):
        super().__init__(message)
        self.attempts = attempts


@dataclass
class TrainConfig:
    peak_lr: float = 0.05
    momentum: float = 0.7
    lambda_alpha: float = 1e-6
    lambda_beta: float = 1e-4
    max_epochs: int = 10000
    batches_per_epoch: int = 2
    warmup_fraction: float = 0.10
    window_fraction: float = 0.01
    lr_floor: float = 1e-8
    convergence_p_threshold: float = 0.51
    loss_floor: float = 1e-10
    divergence_factor: float = 10.0
    seed: int | None = 0

    def __post_init__(self):
        if not self.peak_lr > self.lr_floor:
            raise ValueError("peak_lr must exceed lr_floor")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        for name in ("warmup_fraction", "window_fraction"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.max_epochs < 0 or self.batches_per_epoch < 1:
            raise ValueError("max_epochs must be >= 0 and batches_per_epoch >= 1")
        if self.lambda_alpha < 0 or self.lambda_beta < 0:
            raise ValueError("regularization factors must be non-negative")

    @classmethod
    def for_dataset_size(cls, n: int, **overrides) -> "TrainConfig":
        """Epoch budget by dataset size: 10000 x 2 batches below 100k points, else 1000 x 20."""
        if n < 100_000:
            return cls(max_epochs=10000, batches_per_epoch=2, **overrides)
        return cls(max_epochs=1000, batches_per_epoch=20, **overrides)


def mtl_loss(model: MultiTaskModel, dataset: MultiTaskDataset, lambda_alpha: float, lambda_beta: float) -> float:
    """Mean squared error over all observations plus L2 penalties.

    The task-parameter penalty does not apply to context-sensitive models.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    r = dataset.y - predict(model, dataset.X, dataset.tasks)
    loss = float(r @ r) / len(dataset) + lambda_alpha * l2_penalty(model.params)
    if model.tasks is not None:
        loss += lambda_beta * float(np.vdot(model.tasks.beta, model.tasks.beta))
    return loss


@dataclass
class MomentumState:
    velocity: list[np.ndarray]
    momentum: float = 0.7

    @classmethod
    def zeros_like(cls, trainables, momentum: float = 0.7) -> "MomentumState":
        return cls([np.zeros_like(t) for t in trainables], momentum)


def sgd_step(trainables, gradients, state: MomentumState, lr: float) -> None:
    """Heavy-ball update in place: ``v <- mu v + g``, ``theta <- theta - lr v``."""
    momentum = state.momentum
    if len(trainables) != len(gradients) or len(trainables) != len(state.velocity):
        raise ValueError("trainables, gradients and velocity must align")
    for theta, g, v in zip(trainables, gradients, state.velocity):
        if theta.shape != g.shape or theta.shape != v.shape:
            raise ValueError(f"shape mismatch: {theta.shape} vs {g.shape} vs {v.shape}")
        v *= momentum
        v += g
        theta -= lr * v


def convergence_test(loss_window) -> float:
    """p-value of a likelihood-ratio test of slope+intercept vs intercept-only.

    A large p-value means the loss trend is indistinguishable from flat.
    """
    y = np.asarray(loss_window, dtype=np.float64)
    n = len(y)
    if n < 3:
        raise ValueError("need at least 3 losses")
    t = np.arange(n, dtype=np.float64)
    tc = t - t.mean()
    yc = y - y.mean()
    ss0 = float(yc @ yc)
    slope = float(tc @ yc) / float(tc @ tc)
    ss1 = max(float(((yc - slope * tc) ** 2).sum()), 0.0)
    if ss0 == 0.0:
        return 1.0
    if ss1 == 0.0:
        return 0.0
    stat = max(n * math.log(ss0 / ss1), 0.0)
    # chi-square survival function with one degree of freedom
    return 1.0 - math.erf(math.sqrt(stat / 2.0))


class LRSchedule:
    """Linear warm-up from ``lr_floor`` to the peak, then halving on plateaus.

    Call :meth:`step` with each finished epoch's loss; it returns ``None`` once
    training should stop (``stop_reason`` says why), otherwise the learning
    rate for the next epoch.
    """

    def __init__(self, config: TrainConfig):
        self.config = config
        self.peak = config.peak_lr
        self.floor = config.lr_floor
        self.warmup_epochs = int(round(config.warmup_fraction * config.max_epochs))
        self.window = max(3, int(round(config.window_fraction * config.max_epochs)))
        self.epoch = 0
        self.phase = "warmup" if self.warmup_epochs > 0 else "plateau"
        self.current_lr = self.floor if self.warmup_epochs > 0 else self.peak
        self.losses: deque = deque(maxlen=self.window)
        self.since_change = 0
        self.last_converged = False
        self.stop_reason: str | None = None

    def _warmup_lr(self, epoch: int) -> float:
        return self.floor + (self.peak - self.floor) * epoch / self.warmup_epochs

    def step(self, epoch_loss: float) -> float | None:
        self.epoch += 1
        self.last_converged = False
        if epoch_loss <= self.config.loss_floor:
            self.stop_reason = "loss_floor"
            return None
        if self.epoch >= self.config.max_epochs:
            self.stop_reason = "max_epochs"
            return None
        if self.phase == "warmup":
            if self.epoch < self.warmup_epochs:
                self.current_lr = self._warmup_lr(self.epoch)
                return self.current_lr
            self.phase = "plateau"
            self.current_lr = self.peak
            self.losses.clear()
            self.since_change = 0
            return self.current_lr

        self.losses.append(epoch_loss)
        self.since_change += 1
        if self.since_change >= self.window:
            p = convergence_test(self.losses)
            if p > self.config.convergence_p_threshold:
                self.last_converged = True
                self.current_lr /= 2.0
                self.since_change = 0
                self.losses.clear()
                if self.current_lr < self.floor:
                    self.stop_reason = "lr_floor"
                    return None
        return self.current_lr


@dataclass
class TrainResult:
    model: MultiTaskModel
    history: list = field(default_factory=list)  # (epoch, lr, train_loss, converged)
    diagnostics: dict = field(default_factory=dict)

    @property
    def diverged(self) -> bool:
        return bool(self.diagnostics.get("diverged"))


def _trainables(model: MultiTaskModel):
    arrays = model.params.arrays()
    if model.tasks is not None:
        arrays.append(model.tasks.beta)
    return arrays


def train(model: MultiTaskModel, dataset: MultiTaskDataset, config: TrainConfig) -> TrainResult:
    """Fit ``model`` in place on ``dataset`` (already in model units).

    Each epoch shuffles the observations into ``batches_per_epoch`` equal
    batches.  A batch's loss is its mean squared error plus the full penalty
    terms.  Divergence (non-finite loss, or an epoch loss above
    ``divergence_factor`` times the first epoch's loss) ends the run with
    ``diagnostics["diverged"] = True``.
    """
    if dataset.d_x != model.d_x or dataset.num_tasks > model.num_tasks:
        raise ValueError("dataset is incompatible with the model")
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    start = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    schedule = LRSchedule(config)
    trainables = _trainables(model)
    velocity = MomentumState.zeros_like(trainables, config.momentum)
    is_cs = model.kind is ModelKind.CONTEXT_SENSITIVE
    la, lb = config.lambda_alpha, 0.0 if is_cs else config.lambda_beta

    history = []
    diagnostics = {"diverged": False, "stop_reason": "max_epochs", "epochs": 0}
    reference = None
    lr = schedule.current_lr
    n = len(dataset)
    X, y, tasks = dataset.X, dataset.y, dataset.tasks

    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.max_epochs):
            batches = np.array_split(rng.permutation(n), min(config.batches_per_epoch, n))
            batch_losses = []
            for rows in batches:
                sse, grads, d_beta = loss_gradients(model, X[rows], tasks[rows], y[rows])
                scale = 1.0 / len(rows)
                reg = la * l2_penalty(model.params)
                gradients = [scale * g + 2.0 * la * p for g, p in zip(grads.arrays(), model.params.arrays())]
                if model.tasks is not None:
                    reg += lb * float(np.vdot(model.tasks.beta, model.tasks.beta))
                    gradients.append(scale * d_beta + 2.0 * lb * model.tasks.beta)
                batch_loss = scale * sse + reg
                if not np.isfinite(batch_loss):
                    break
                batch_losses.append(batch_loss)
                sgd_step(trainables, gradients, velocity, lr)

            epoch_loss = float(np.mean(batch_losses)) if len(batch_losses) == len(batches) else math.inf
            if reference is None:
                reference = epoch_loss
            diverged = not np.isfinite(epoch_loss) or epoch_loss > config.divergence_factor * reference
            next_lr = None if diverged else schedule.step(epoch_loss)
            history.append((epoch, lr, epoch_loss, schedule.last_converged))
            diagnostics["epochs"] = epoch + 1
            if diverged:
                diagnostics.update(diverged=True, stop_reason="diverged")
                log.info("training diverged at epoch %d (loss %.3g)", epoch, epoch_loss)
                break
            if next_lr is None:
                diagnostics["stop_reason"] = schedule.stop_reason
                break
            lr = next_lr

    diagnostics["wall_time"] = time.perf_counter() - start
    diagnostics["final_lr"] = lr
    return TrainResult(model, history, diagnostics)


def train_with_retry(model_factory, dataset: MultiTaskDataset, config: TrainConfig,
                     max_retries: int = 10, lr_decay: float = 0.9) -> TrainResult:
    """Train, and on divergence rebuild the model and retry with ``peak_lr * lr_decay``.

    ``model_factory(seed)`` must return a freshly initialized model.  The
    number of retries is reported as ``diagnostics["retries"]``.
    """
    base_seed = 0 if config.seed is None else int(config.seed)
    cfg = config
    for attempt in range(max_retries + 1):
        model = model_factory(base_seed + attempt)
        result = train(model, dataset, cfg)
        if not result.diverged:
            result.diagnostics.update(retries=attempt, peak_lr_used=cfg.peak_lr)
            return result
        log.info("retry %d: peak lr %.4g -> %.4g", attempt + 1, cfg.peak_lr, cfg.peak_lr * lr_decay)
        cfg = replace(cfg, peak_lr=max(cfg.peak_lr * lr_decay, cfg.lr_floor * 1.0001), seed=base_seed + attempt + 1)
    raise TrainingDivergedError(f"training diverged in all {max_retries + 1} attempts", max_retries + 1)


def write_history(result: TrainResult, path) -> None:
    """Loss history as CSV: epoch, lr, train_loss, converged_flag."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "train_loss", "converged_flag"])
        for epoch, lr, loss, conv in result.history:
            w.writerow([epoch, repr(float(lr)), repr(float(loss)), int(bool(conv))])


def write_diagnostics(result: TrainResult, path) -> None:
    Path(path).write_text(json.dumps(result.diagnostics, indent=2, default=float))
