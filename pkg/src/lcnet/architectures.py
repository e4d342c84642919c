"""Multi-task network architectures sharing one residual network.

* learned-context (LC): the network sees ``[x; beta_j]`` with ``beta_j`` trained.
* context-sensitive (CS): the network sees ``[x; c_j]`` with ``c_j`` one-hot.
* last-layer (LL): a network ``h`` with ``d_beta`` outputs, prediction ``beta_j . h(x)``.

Task ids are 1-based throughout.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .network import GradientSet, NetShape, ParamSet, backward, forward, init_he, params_from_dict, params_to_dict

__all__ = [
    "ModelKind",
    "TaskParameterTable",
    "MultiTaskModel",
    "build_model",
    "augment_input",
    "predict",
    "predict_with_beta",
    "model_gradients",
    "loss_gradients",
    "parameter_count",
    "model_to_dict",
    "model_from_dict",
    "save_bundle",
    "load_bundle",
]


class ModelKind(str, Enum):
    LEARNED_CONTEXT = "lc"
    CONTEXT_SENSITIVE = "cs"
    LAST_LAYER = "ll"


@dataclass
class TaskParameterTable:
    beta: np.ndarray  # (m, d_beta)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.beta.ndim != 2 or self.beta.shape[1] < 1:
            raise ValueError("beta must be an (m, d_beta) array with d_beta >= 1")

    @classmethod
    def zeros(cls, m: int, d_beta: int) -> "TaskParameterTable":
        return cls(np.zeros((m, d_beta)))

    @property
    def m(self) -> int:
        return self.beta.shape[0]

    @property
    def d_beta(self) -> int:
        return self.beta.shape[1]

    def __getitem__(self, task_id: int) -> np.ndarray:
        return self.beta[_index(task_id, self.m)]

    def copy(self) -> "TaskParameterTable":
        return TaskParameterTable(self.beta.copy())


@dataclass
class MultiTaskModel:
    kind: ModelKind
    params: ParamSet
    num_tasks: int
    d_x: int
    tasks: TaskParameterTable | None = None
    shape: NetShape | None = None

    def __post_init__(self):
        self.kind = ModelKind(self.kind)
        p = self.params
        if self.kind is ModelKind.CONTEXT_SENSITIVE:
            expected_in, expected_out = self.d_x + self.num_tasks, 1
        else:
            if self.tasks is None or self.tasks.m != self.num_tasks:
                raise ValueError("LC and LL models need one task-parameter vector per task")
            if self.kind is ModelKind.LEARNED_CONTEXT:
                expected_in, expected_out = self.d_x + self.tasks.d_beta, 1
            else:
                expected_in, expected_out = self.d_x, self.tasks.d_beta
        if p.input_dim != expected_in or p.output_dim != expected_out:
            raise ValueError(
                f"{self.kind.name} network must map {expected_in} -> {expected_out}, "
                f"got {p.input_dim} -> {p.output_dim}"
            )

    @property
    def d_beta(self) -> int:
        return 0 if self.tasks is None else self.tasks.d_beta

    def copy(self) -> "MultiTaskModel":
        return MultiTaskModel(
            self.kind, self.params.copy(), self.num_tasks, self.d_x,
            None if self.tasks is None else self.tasks.copy(), self.shape,
        )


def _index(task_id, m):
    idx = np.asarray(task_id, dtype=np.int64) - 1
    if np.any(idx < 0) or np.any(idx >= m):
        raise KeyError(f"unknown task id (valid ids are 1..{m})")
    return idx


def build_model(kind, d_x: int, num_tasks: int, hidden_dim: int = 128, num_blocks: int = 2,
                d_beta: int = 2, seed=None) -> MultiTaskModel:
    """He-initialized shared network with zero-initialized task parameters."""
    kind = ModelKind(kind)
    if kind is ModelKind.LEARNED_CONTEXT:
        shape = NetShape(d_x + d_beta, hidden_dim, num_blocks, 1)
    elif kind is ModelKind.CONTEXT_SENSITIVE:
        shape = NetShape(d_x + num_tasks, hidden_dim, num_blocks, 1)
    else:
        shape = NetShape(d_x, hidden_dim, num_blocks, d_beta)
    tasks = None if kind is ModelKind.CONTEXT_SENSITIVE else TaskParameterTable.zeros(num_tasks, d_beta)
    return MultiTaskModel(kind, init_he(shape, seed), num_tasks, d_x, tasks, shape)


def augment_input(kind, x, task_id, tasks: TaskParameterTable | None = None, num_tasks: int | None = None):
    """Network input for observations ``x`` of tasks ``task_id`` (scalar or per row)."""
    kind = ModelKind(kind)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    ids = np.broadcast_to(np.asarray(task_id), (X.shape[0],))
    if kind is ModelKind.LEARNED_CONTEXT:
        Z = np.hstack([X, tasks.beta[_index(ids, tasks.m)]])
    elif kind is ModelKind.CONTEXT_SENSITIVE:
        m = num_tasks if num_tasks is not None else tasks.m
        onehot = np.zeros((X.shape[0], m))
        onehot[np.arange(X.shape[0]), _index(ids, m)] = 1.0
        Z = np.hstack([X, onehot])
    else:
        Z = X
    return Z[0] if single else Z


def _model_input(model: MultiTaskModel, X, task_ids):
    return augment_input(model.kind, X, task_ids, model.tasks, model.num_tasks)


def predict(model: MultiTaskModel, X, task_ids) -> np.ndarray:
    """Predictions for rows of ``X`` (or a single vector) belonging to ``task_ids``."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    Xb = X[None, :] if single else X
    if Xb.shape[1] != model.d_x:
        raise ValueError(f"expected {model.d_x} features, got {Xb.shape[1]}")
    ids = np.broadcast_to(np.asarray(task_ids), (Xb.shape[0],))
    out, _ = forward(model.params, _model_input(model, Xb, ids))
    if model.kind is ModelKind.LAST_LAYER:
        y = np.einsum("nk,nk->n", out, model.tasks.beta[_index(ids, model.num_tasks)])
    else:
        y = out[:, 0]
    return y[0] if single else y


def predict_with_beta(model: MultiTaskModel, X, beta) -> np.ndarray:
    """Predictions with an explicit task-parameter vector, bypassing the task table."""
    if model.kind is ModelKind.CONTEXT_SENSITIVE:
        raise ValueError("context-sensitive models have no task parameters")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    beta = np.asarray(beta, dtype=np.float64).ravel()
    if model.kind is ModelKind.LEARNED_CONTEXT:
        out, _ = forward(model.params, np.hstack([X, np.broadcast_to(beta, (len(X), len(beta)))]))
        return out[:, 0]
    out, _ = forward(model.params, X)
    return np.einsum("nk,nk->n", out, np.broadcast_to(beta, out.shape))


def model_gradients(model: MultiTaskModel, X, task_ids, upstream):
    """Gradients of ``sum_i upstream_i * prediction_i``.

    Returns the shared-network :class:`GradientSet` and an ``(m, d_beta)``
    array of task-parameter gradients (``None`` for CS models); tasks without
    observations in the batch get zero rows.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    ids = np.broadcast_to(np.asarray(task_ids), (n,))
    idx = _index(ids, model.num_tasks)
    g = np.broadcast_to(np.asarray(upstream, dtype=np.float64), (n,))
    out, trace = forward(model.params, _model_input(model, X, ids))

    d_beta = None
    if model.kind is ModelKind.LAST_LAYER:
        beta = model.tasks.beta[idx]
        grads = backward(model.params, trace, g[:, None] * beta)
        d_beta = np.zeros_like(model.tasks.beta)
        np.add.at(d_beta, idx, g[:, None] * out)
    else:
        grads = backward(model.params, trace, g[:, None])
        if model.kind is ModelKind.LEARNED_CONTEXT:
            d_beta = np.zeros_like(model.tasks.beta)
            np.add.at(d_beta, idx, grads.d_input[:, model.d_x:])
    return grads, d_beta


def loss_gradients(model: MultiTaskModel, X, task_ids, y):
    """Sum of squared errors with its gradients, sharing one forward pass.

    Returns ``(sse, GradientSet, d_beta)``; see :func:`model_gradients`.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    idx = _index(task_ids, model.num_tasks)
    out, trace = forward(model.params, _model_input(model, X, task_ids))
    d_beta = None
    if model.kind is ModelKind.LAST_LAYER:
        beta = model.tasks.beta[idx]
        pred = np.einsum("nk,nk->n", out, beta)
        r = pred - y
        grads = backward(model.params, trace, 2.0 * r[:, None] * beta)
        d_beta = np.zeros_like(model.tasks.beta)
        np.add.at(d_beta, idx, 2.0 * r[:, None] * out)
    else:
        r = out[:, 0] - y
        grads = backward(model.params, trace, 2.0 * r[:, None])
        if model.kind is ModelKind.LEARNED_CONTEXT:
            d_beta = np.zeros_like(model.tasks.beta)
            np.add.at(d_beta, idx, grads.d_input[:, model.d_x:])
    return float(r @ r), grads, d_beta


def parameter_count(model: MultiTaskModel) -> int:
    """Number of trainable scalars (shared weights plus task parameters)."""
    return model.params.size + (0 if model.tasks is None else model.tasks.beta.size)


def model_to_dict(model: MultiTaskModel) -> dict:
    return {
        "format": "lcnet.model",
        "version": 1,
        "kind": model.kind.value,
        "num_tasks": model.num_tasks,
        "d_x": model.d_x,
        "network": params_to_dict(model.params, model.shape),
        "beta": None if model.tasks is None else model.tasks.beta.tolist(),
    }


def model_from_dict(doc: dict) -> MultiTaskModel:
    if doc.get("format") != "lcnet.model":
        raise ValueError("not an lcnet model document")
    params, shape = params_from_dict(doc["network"])
    tasks = None if doc["beta"] is None else TaskParameterTable(np.array(doc["beta"], dtype=np.float64))
    return MultiTaskModel(ModelKind(doc["kind"]), params, int(doc["num_tasks"]), int(doc["d_x"]), tasks, shape)


def save_bundle(path, model: MultiTaskModel, scaler=None, extra: dict | None = None) -> None:
    """Write model, task parameters and (optionally) scaler state as one JSON file."""
    doc = {"model": model_to_dict(model), "scaler": None if scaler is None else scaler.to_dict()}
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


def load_bundle(path):
    """Inverse of :func:`save_bundle`; returns ``(model, scaler_or_None, extra)``."""
    from .data import Scaler

    doc = json.loads(Path(path).read_text())
    scaler = None if doc.get("scaler") is None else Scaler.from_dict(doc["scaler"])
    return model_from_dict(doc["model"]), scaler, doc.get("extra", {})
