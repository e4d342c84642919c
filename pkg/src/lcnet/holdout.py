"""Task-parameter estimation for new tasks against a frozen learned-context model.

The objective is the negative log posterior (times two, up to constants)

    (1 / s2) * sum_i (y_i - f(x_i; beta))^2 + beta' D^-1 beta

with ``D`` the covariance of the base tasks' parameters and ``s2`` their
held-out error variance.  All data are in the model's (scaled) units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.signal import find_peaks

from .architectures import ModelKind, MultiTaskModel, predict_with_beta
from .lipo import Dimension, HyperBox, lipo_minimize
from .network import backward, forward

__all__ = [
    "HoldoutPrior",
    "HoldoutFit",
    "estimate_prior",
    "search_bounds",
    "holdout_objective",
    "fit_holdout_task",
    "likelihood_scan",
    "count_modes",
    "mode_indices",
]


@dataclass
class HoldoutPrior:
    D: np.ndarray
    s2: float

    def __post_init__(self):
        self.D = np.atleast_2d(np.asarray(self.D, dtype=np.float64))
        if self.s2 <= 0:
            raise ValueError("likelihood scale s2 must be positive")
        if not np.allclose(self.D, self.D.T):
            raise ValueError("D must be symmetric")
        self._chol = np.linalg.cholesky(self.D)  # raises unless positive definite

    @property
    def d_beta(self) -> int:
        return self.D.shape[0]

    def precision(self) -> np.ndarray:
        eye = np.eye(self.d_beta)
        return np.linalg.solve(self._chol.T, np.linalg.solve(self._chol, eye))

    def to_dict(self) -> dict:
        return {"D": self.D.tolist(), "s2": self.s2}


def estimate_prior(base_betas, base_residuals, jitter: float = 1e-8) -> HoldoutPrior:
    """Prior covariance from base-task parameters and ``s2`` from base held-out residuals."""
    B = np.asarray(base_betas, dtype=np.float64)
    if B.ndim == 1:
        B = B[:, None]
    if B.shape[0] < 2:
        raise ValueError("need at least two base tasks")
    D = np.atleast_2d(np.cov(B, rowvar=False, ddof=1)) + jitter * np.eye(B.shape[1])
    r = np.asarray(base_residuals, dtype=np.float64)
    return HoldoutPrior(D, float(np.mean(r ** 2)))


def search_bounds(base_betas, margin: float = 0.5):
    """Per-coordinate box: base range widened by ``margin`` times the range on each side."""
    B = np.atleast_2d(np.asarray(base_betas, dtype=np.float64))
    lo, hi = B.min(axis=0), B.max(axis=0)
    span = hi - lo
    return lo - margin * span, hi + margin * span


def _check(model: MultiTaskModel):
    if model.kind is not ModelKind.LEARNED_CONTEXT:
        raise ValueError("hold-out adaptation needs a learned-context model")


def holdout_objective(model: MultiTaskModel, X, y, beta, prior: HoldoutPrior, include_prior: bool = True) -> float:
    _check(model)
    beta = np.asarray(beta, dtype=np.float64).ravel()
    value = float(beta @ prior.precision() @ beta) if include_prior else 0.0
    y = np.asarray(y, dtype=np.float64)
    if len(y):
        r = y - predict_with_beta(model, X, beta)
        value += float(r @ r) / prior.s2
    return value


def _objective_and_grad(model, X, y, beta, prior, P):
    out, trace = forward(model.params, np.hstack([X, np.broadcast_to(beta, (len(X), len(beta)))]))
    r = out[:, 0] - y
    grads = backward(model.params, trace, (2.0 / prior.s2) * r[:, None])
    g = grads.d_input[:, model.d_x:].sum(axis=0) + 2.0 * P @ beta
    return float(r @ r) / prior.s2 + float(beta @ P @ beta), g


@dataclass
class HoldoutFit:
    beta: np.ndarray
    objective: float
    evaluations: int
    trials: list = field(default_factory=list)


def fit_holdout_task(model: MultiTaskModel, X, y, prior: HoldoutPrior, bounds=None, budget: int | None = None,
                     seed=0, refine: bool = True) -> HoldoutFit:
    """MAP estimate of a new task's parameters with the shared network frozen.

    A global Lipschitz search over the box (default: the base tasks' range
    widened by half its width on each side) is followed by a bounded
    quasi-Newton polish from the best point found.
    """
    _check(model)
    d = model.d_beta
    X = np.atleast_2d(np.asarray(X, dtype=np.float64)).reshape(-1, model.d_x)
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(y) == 0:
        return HoldoutFit(np.zeros(d), 0.0, 0)
    lo, hi = search_bounds(model.tasks.beta) if bounds is None else map(np.asarray, bounds)
    lo, hi = np.broadcast_to(lo, (d,)).astype(float), np.broadcast_to(hi, (d,)).astype(float)
    if np.all(hi <= lo):
        return HoldoutFit(np.zeros(d), holdout_objective(model, X, y, np.zeros(d), prior), 0)

    box = HyperBox(Dimension(f"beta{i + 1}", lo[i], max(hi[i], lo[i])) for i in range(d))
    budget = 25 * d if budget is None else budget
    result = lipo_minimize(lambda b: holdout_objective(model, X, y, b, prior), box, budget, seed=seed)
    beta, value, evals = result.x, result.fun, len(result.trials)

    if refine:
        P = prior.precision()
        res = minimize(lambda b: _objective_and_grad(model, X, y, b, prior, P), beta, jac=True,
                       method="L-BFGS-B", bounds=list(zip(lo, hi)))
        evals += int(res.nfev)
        if res.fun < value:
            beta, value = np.asarray(res.x, dtype=np.float64), float(res.fun)
    return HoldoutFit(np.asarray(beta, dtype=np.float64), value, evals, result.trials)


def likelihood_scan(model: MultiTaskModel, X, y, prior: HoldoutPrior, grid, include_prior: bool = True):
    """``exp(-objective / 2)`` on a grid, scaled to unit maximum.

    This is the posterior of the MAP objective, or the likelihood alone with
    ``include_prior=False``.

    ``grid`` is a 1-D array for scalar task parameters, or a pair of 1-D axes
    for two parameters (the result then has shape ``(len(ax0), len(ax1))``).
    """
    _check(model)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64)).reshape(-1, model.d_x)
    y = np.asarray(y, dtype=np.float64).ravel()
    if model.d_beta == 1:
        points = np.asarray(grid, dtype=np.float64).reshape(-1, 1)
        shape = (len(points),)
    elif model.d_beta == 2:
        ax0, ax1 = (np.asarray(a, dtype=np.float64) for a in grid)
        points = np.stack(np.meshgrid(ax0, ax1, indexing="ij"), axis=-1).reshape(-1, 2)
        shape = (len(ax0), len(ax1))
    else:
        raise ValueError("likelihood scans support one or two task parameters")
    if points.size == 0:
        raise ValueError("empty grid")
    obj = np.array([holdout_objective(model, X, y, b, prior, include_prior) for b in points])
    density = np.exp(-(obj - obj.min()) / 2.0)
    return density.reshape(shape)


def mode_indices(curve, rel_height: float = 1e-3, rel_prominence: float = 0.1) -> np.ndarray:
    """Grid indices of the modes of a non-negative 1-D curve.

    A mode is a local maximum that reaches ``rel_height`` of the global peak
    and whose prominence is at least ``rel_prominence`` of its own height, so
    the curve must dip by that share before rising to any higher peak.  Flat
    tops count once and the ends of the grid may be modes.
    """
    c = np.asarray(curve, dtype=np.float64)
    peaks, props = find_peaks(np.r_[0.0, c, 0.0], prominence=0.0)
    peaks -= 1
    keep = (c[peaks] >= rel_height * c.max()) & (props["prominences"] >= rel_prominence * c[peaks])
    return peaks[keep]


def count_modes(curve, rel_height: float = 1e-3, rel_prominence: float = 0.1) -> int:
    """Number of modes of a 1-D curve; see :func:`mode_indices`."""
    return max(1, len(mode_indices(curve, rel_height, rel_prominence)))
