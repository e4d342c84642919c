"""Multi-task regression with learned-context residual networks."""

from .architectures import ModelKind, MultiTaskModel, TaskParameterTable, build_model, predict
from .data import MultiTaskDataset, gen_frequency, gen_sine_line, load_csv
from .estimators import (
    ContextSensitiveRegressor,
    LastLayerRegressor,
    LearnedContextRegressor,
    MixedEffectRegressor,
)
from .network import NetShape, ParamSet, backward, forward, init_he
from .training import TrainConfig, train, train_with_retry

__version__ = "0.1.0"

__all__ = [
    "ModelKind",
    "MultiTaskModel",
    "TaskParameterTable",
    "build_model",
    "predict",
    "MultiTaskDataset",
    "gen_frequency",
    "gen_sine_line",
    "load_csv",
    "LearnedContextRegressor",
    "ContextSensitiveRegressor",
    "LastLayerRegressor",
    "MixedEffectRegressor",
    "NetShape",
    "ParamSet",
    "forward",
    "backward",
    "init_he",
    "TrainConfig",
    "train",
    "train_with_retry",
]
