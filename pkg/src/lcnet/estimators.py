"""scikit-learn style estimators for the multi-task models.

All estimators take the task id array as an extra argument::

    est = LearnedContextRegressor(d_beta=2).fit(X, y, tasks)
    est.predict(X_new, tasks_new)

Inputs and target are standardized internally; predictions are in original
units.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .architectures import ModelKind, build_model, load_bundle, predict, save_bundle
from .data import MultiTaskDataset, fit_scaler
from .lme import LMEModel, lme_fit, lme_predict
from .training import TrainConfig, train_with_retry

__all__ = [
    "LearnedContextRegressor",
    "ContextSensitiveRegressor",
    "LastLayerRegressor",
    "MixedEffectRegressor",
]


def _check_tasks(tasks, n: int) -> np.ndarray:
    t = np.asarray(tasks)
    if t.shape != (n,):
        raise ValueError(f"tasks must be a 1-D array of length {n}")
    if not np.issubdtype(t.dtype, np.integer):
        if not np.all(np.mod(t, 1) == 0):
            raise ValueError("task ids must be integers")
    t = t.astype(np.int64)
    if n and t.min() < 1:
        raise ValueError("task ids start at 1")
    return t


class _NetworkRegressor(RegressorMixin, BaseEstimator):
    _kind: ModelKind

    def __init__(self, hidden_dim=128, num_blocks=2, d_beta=2, peak_lr=0.05, lambda_alpha=1e-6,
                 lambda_beta=1e-4, max_epochs=2000, batches_per_epoch=2, momentum=0.7, max_retries=10,
                 random_state=0):
        self.hidden_dim = hidden_dim
        self.num_blocks = num_blocks
        self.d_beta = d_beta
        self.peak_lr = peak_lr
        self.lambda_alpha = lambda_alpha
        self.lambda_beta = lambda_beta
        self.max_epochs = max_epochs
        self.batches_per_epoch = batches_per_epoch
        self.momentum = momentum
        self.max_retries = max_retries
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            peak_lr=self.peak_lr, momentum=self.momentum, lambda_alpha=self.lambda_alpha,
            lambda_beta=self.lambda_beta, max_epochs=self.max_epochs,
            batches_per_epoch=self.batches_per_epoch, seed=self.random_state,
        )

    def fit(self, X, y, tasks, num_tasks: int | None = None):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        tasks = _check_tasks(tasks, len(y))
        m = int(num_tasks or tasks.max())
        ds = MultiTaskDataset(tasks, X, y, m)
        self.scaler_ = fit_scaler(ds)
        arch = {"hidden_dim": self.hidden_dim, "num_blocks": self.num_blocks, "d_beta": self.d_beta}
        result = train_with_retry(
            lambda s: build_model(self._kind, X.shape[1], m, seed=s, **arch),
            self.scaler_.transform(ds), self._config(), max_retries=self.max_retries,
        )
        self.model_ = result.model
        self.history_ = result.history
        self.diagnostics_ = result.diagnostics
        self.n_features_in_ = X.shape[1]
        self.num_tasks_ = m
        return self

    def predict(self, X, tasks):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        tasks = _check_tasks(tasks, X.shape[0])
        return self.scaler_.inverse_y(predict(self.model_, self.scaler_.transform_X(X), tasks))

    def score(self, X, y, tasks, sample_weight=None):
        from sklearn.metrics import r2_score

        return r2_score(y, self.predict(X, tasks), sample_weight=sample_weight)

    @property
    def task_parameters_(self) -> np.ndarray | None:
        check_is_fitted(self, "model_")
        return None if self.model_.tasks is None else self.model_.tasks.beta.copy()

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        save_bundle(path, self.model_, self.scaler_, {"estimator": type(self).__name__, "params": self.get_params()})

    @classmethod
    def load(cls, path):
        model, scaler, extra = load_bundle(path)
        if model.kind is not cls._kind:
            raise ValueError(f"bundle holds a {model.kind.value} model, not {cls._kind.value}")
        est = cls(**extra.get("params", {}))
        est.model_, est.scaler_ = model, scaler
        est.n_features_in_, est.num_tasks_ = model.d_x, model.num_tasks
        return est


class LearnedContextRegressor(_NetworkRegressor):
    """Shared residual network on ``[x; beta_j]`` with trained task parameters."""

    _kind = ModelKind.LEARNED_CONTEXT


class ContextSensitiveRegressor(_NetworkRegressor):
    """Shared residual network on ``[x; one_hot(j)]``; ``d_beta`` and ``lambda_beta`` are unused."""

    _kind = ModelKind.CONTEXT_SENSITIVE


class LastLayerRegressor(_NetworkRegressor):
    """Per-task linear read-out ``beta_j . h(x)`` of a shared network."""

    _kind = ModelKind.LAST_LAYER


class MixedEffectRegressor(RegressorMixin, BaseEstimator):
    """Linear model with a random intercept per task, fitted by maximum likelihood."""

    def __init__(self, tol=1e-8, max_iter=20000):
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y, tasks, num_tasks: int | None = None):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        tasks = _check_tasks(tasks, len(y))
        ds = MultiTaskDataset(tasks, X, y, int(num_tasks or tasks.max()))
        self.model_: LMEModel = lme_fit(ds, tol=self.tol, max_iter=self.max_iter)
        self.n_features_in_ = X.shape[1]
        self.num_tasks_ = ds.num_tasks
        return self

    def predict(self, X, tasks):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return lme_predict(self.model_, X, _check_tasks(tasks, X.shape[0]))

    def score(self, X, y, tasks, sample_weight=None):
        from sklearn.metrics import r2_score

        return r2_score(y, self.predict(X, tasks), sample_weight=sample_weight)

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        m = self.model_
        Path(path).write_text(json.dumps({
            "format": "lcnet.lme", "slope": m.slope.tolist(), "intercept": m.intercept,
            "task_intercepts": m.task_intercepts.tolist(), "sigma_eps2": m.sigma_eps2,
            "sigma_beta2": m.sigma_beta2, "params": self.get_params(),
        }))

    @classmethod
    def load(cls, path):
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != "lcnet.lme":
            raise ValueError("not an lcnet mixed-effect model file")
        est = cls(**doc["params"])
        est.model_ = LMEModel(np.array(doc["slope"]), doc["intercept"], np.array(doc["task_intercepts"]),
                              doc["sigma_eps2"], doc["sigma_beta2"])
        est.n_features_in_, est.num_tasks_ = len(est.model_.slope), len(est.model_.task_intercepts)
        return est
