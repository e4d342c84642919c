"""Linear varying-intercept mixed model fitted by EM on the marginal likelihood.

    y_ij = a.x_ij + b + beta_j + eps_ij,   beta_j ~ N(0, s_beta2),  eps_ij ~ N(0, s_eps2)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import MultiTaskDataset

__all__ = ["LMEModel", "LMEConvergenceError", "lme_fit", "lme_predict", "lme_loglik"]


class LMEConvergenceError(RuntimeError):
    def __init__(self, message, model, iterations):
        super().__init__(message)
        self.model = model
        self.iterations = iterations


@dataclass
class LMEModel:
    slope: np.ndarray
    intercept: float
    task_intercepts: np.ndarray
    sigma_eps2: float
    sigma_beta2: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def coef(self) -> np.ndarray:
        return np.append(self.slope, self.intercept)


def _design(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return np.hstack([X, np.ones((X.shape[0], 1))])


def lme_loglik(dataset: MultiTaskDataset, coef, sigma_eps2: float, sigma_beta2: float) -> float:
    """Marginal log-likelihood, using the closed form for compound-symmetric blocks."""
    r = dataset.y - _design(dataset.X) @ np.asarray(coef)
    idx = dataset.tasks - 1
    n_j = np.bincount(idx, minlength=dataset.num_tasks).astype(float)
    s_j = np.bincount(idx, weights=r, minlength=dataset.num_tasks)
    n_j, s_j = n_j[n_j > 0], s_j[n_j > 0]
    denom = sigma_eps2 + n_j * sigma_beta2
    logdet = float(np.sum((n_j - 1) * math.log(sigma_eps2) + np.log(denom)))
    quad = (float(r @ r) - float(np.sum(sigma_beta2 * s_j ** 2 / denom))) / sigma_eps2
    return -0.5 * (len(r) * math.log(2 * math.pi) + logdet + quad)


def lme_fit(dataset: MultiTaskDataset, tol: float = 1e-8, max_iter: int = 20000) -> LMEModel:
    """Maximum-likelihood fit; task intercepts are posterior means (BLUPs).

    EM alternates the Gaussian posterior of each task intercept with closed-form
    updates of the fixed effects and both variances.  Iteration stops once the
    largest relative parameter change falls below ``tol``.  A single task has no
    identifiable intercept variance and reduces to ordinary least squares; the
    same holds when the likelihood is maximized at ``sigma_beta2 = 0``.
    """
    F = _design(dataset.X)
    n, p = F.shape
    if n < p + 1:
        raise ValueError(f"need at least {p + 1} observations for {p - 1} features")
    if np.linalg.matrix_rank(F) < p:
        raise np.linalg.LinAlgError("singular design matrix (collinear features or constant column)")
    y = dataset.y
    idx = dataset.tasks - 1
    m = dataset.num_tasks
    n_j = np.bincount(idx, minlength=m).astype(float)
    FtF_inv_Ft = np.linalg.solve(F.T @ F, F.T)

    coef = FtF_inv_Ft @ y
    r = y - F @ coef
    if m == 1 or np.count_nonzero(n_j) < 2:
        s2 = float(r @ r) / n
        return LMEModel(coef[:-1], float(coef[-1]), np.zeros(m), s2, 0.0, {"iterations": 0, "ols": True})

    def boundary(reason):
        s2 = float(r @ r) / n
        return LMEModel(coef[:-1], float(coef[-1]), np.zeros(m), s2, 0.0,
                        {"iterations": it, "ols": False, "boundary": reason,
                         "loglik": lme_loglik(dataset, coef, s2, 0.0)})

    # score of the log-likelihood in s_beta2 at 0: a non-positive slope puts
    # the maximum on the boundary, which EM would only approach geometrically
    it = 0
    s2_ols = float(r @ r) / n
    sums = np.bincount(idx, weights=r, minlength=m)
    if float(np.sum(sums ** 2)) / s2_ols ** 2 - n / s2_ols <= 0:
        return boundary("score")

    means = sums / np.maximum(n_j, 1)
    s_eps2 = max(float(np.mean((r - means[idx]) ** 2)), 1e-12 * float(np.var(y)) + 1e-300)
    s_beta2 = max(float(np.var(means[n_j > 0])), 1e-3 * s_eps2)

    def e_step(coef, s_eps2, s_beta2):
        s_j = np.bincount(idx, weights=y - F @ coef, minlength=m)
        v = 1.0 / (n_j / s_eps2 + 1.0 / s_beta2)
        return v * s_j / s_eps2, v

    converged = False
    for it in range(1, max_iter + 1):
        mu, v = e_step(coef, s_eps2, s_beta2)
        new_coef = FtF_inv_Ft @ (y - mu[idx])
        resid = y - F @ new_coef - mu[idx]
        new_eps2 = (float(resid @ resid) + float(n_j @ v)) / n
        new_beta2 = float(np.mean(mu ** 2 + v))
        old = np.append(coef, [s_eps2, s_beta2])
        new = np.append(new_coef, [new_eps2, new_beta2])
        change = float(np.max(np.abs(new - old) / np.maximum(np.abs(new), 1e-12)))
        coef, s_eps2, s_beta2 = new_coef, new_eps2, new_beta2
        if s_beta2 < 1e-12 * s_eps2:
            coef = FtF_inv_Ft @ y
            r = y - F @ coef
            return boundary("collapsed")
        if change < tol:
            converged = True
            break

    mu, _ = e_step(coef, s_eps2, s_beta2)
    model = LMEModel(
        coef[:-1], float(coef[-1]), mu, s_eps2, s_beta2,
        {"iterations": it, "ols": False, "loglik": lme_loglik(dataset, coef, s_eps2, s_beta2)},
    )
    if not converged:
        raise LMEConvergenceError(
            f"EM did not converge in {max_iter} iterations (last relative change {change:.3g})", model, it
        )
    return model


def lme_predict(model: LMEModel, X, task_ids) -> np.ndarray:
    """``a.x + b + beta_j``; task ids outside the fitted range use ``beta = 0``."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    Xb = X[None, :] if single else X
    if Xb.shape[1] != len(model.slope):
        raise ValueError(f"expected {len(model.slope)} features, got {Xb.shape[1]}")
    ids = np.broadcast_to(np.asarray(task_ids, dtype=np.int64), (Xb.shape[0],))
    known = (ids >= 1) & (ids <= len(model.task_intercepts))
    beta = np.where(known, model.task_intercepts[np.clip(ids - 1, 0, len(model.task_intercepts) - 1)], 0.0)
    y = Xb @ model.slope + model.intercept + beta
    return y[0] if single else y
