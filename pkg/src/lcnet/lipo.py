"""Global minimization over a box with an adaptive Lipschitz lower bound.

Odd iterations (once enough points exist) take a trust-region step on a
separable quadratic fitted around the incumbent; the others pick, among random
candidates, the point whose Lipschitz lower bound is smallest, provided that
bound could beat the incumbent.  All geometry is done in unit-cube coordinates
(log-scaled dimensions are mapped in log10 space).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Dimension", "HyperBox", "TrialRecord", "LipoResult", "lipo_minimize"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dimension:
    name: str
    low: float
    high: float
    log: bool = False
    integer: bool = False

    def __post_init__(self):
        if self.low > self.high:
            raise ValueError(f"{self.name}: low must not exceed high")
        if self.log and self.low <= 0:
            raise ValueError(f"{self.name}: log-scaled bounds must be positive")
        if self.integer and (self.low != int(self.low) or self.high != int(self.high)):
            raise ValueError(f"{self.name}: integer dimension needs integer bounds")

    @property
    def collapsed(self) -> bool:
        return self.low == self.high


class HyperBox:
    """Named, bounded search dimensions with unit-cube mapping."""

    def __init__(self, dims):
        self.dims = list(dims)
        if not self.dims:
            raise ValueError("a box needs at least one dimension")

    @classmethod
    def from_dict(cls, doc: dict) -> "HyperBox":
        return cls(Dimension(name, **spec) for name, spec in doc.items())

    def to_dict(self) -> dict:
        return {d.name: {"low": d.low, "high": d.high, "log": d.log, "integer": d.integer} for d in self.dims}

    @classmethod
    def default(cls, num_tasks: int, hidden_max: int = 500) -> "HyperBox":
        """Standard network search box; ``d_beta`` is capped at ``min(25, num_tasks)``."""
        return cls([
            Dimension("peak_lr", 1e-4, 1.5, log=True),
            Dimension("hidden_dim", 50, hidden_max, integer=True),
            Dimension("lambda_alpha", 1e-15, 1e-5, log=True),
            Dimension("lambda_beta", 1e-15, 1e-3, log=True),
            Dimension("d_beta", 1, min(25, num_tasks), integer=True),
        ])

    def subset(self, names) -> "HyperBox":
        return HyperBox(d for d in self.dims if d.name in set(names))

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    def __len__(self) -> int:
        return len(self.dims)

    @property
    def collapsed(self) -> bool:
        return all(d.collapsed for d in self.dims)

    def _bounds(self):
        lo = np.array([math.log10(d.low) if d.log else d.low for d in self.dims])
        hi = np.array([math.log10(d.high) if d.log else d.high for d in self.dims])
        return lo, hi

    def from_unit(self, u) -> np.ndarray:
        lo, hi = self._bounds()
        t = lo + np.clip(u, 0.0, 1.0) * (hi - lo)
        x = np.array([10.0 ** v if d.log else v for v, d in zip(t, self.dims)])
        for i, d in enumerate(self.dims):
            if d.integer:
                x[i] = float(np.clip(round(x[i]), d.low, d.high))
            x[i] = float(np.clip(x[i], d.low, d.high))
        return x

    def to_unit(self, x) -> np.ndarray:
        lo, hi = self._bounds()
        t = np.array([math.log10(v) if d.log else v for v, d in zip(np.asarray(x, dtype=float), self.dims)])
        span = np.where(hi > lo, hi - lo, 1.0)
        return np.where(hi > lo, (t - lo) / span, 0.5)

    def snap(self, u) -> np.ndarray:
        """Unit coordinates of the box point that ``u`` actually evaluates to."""
        return self.to_unit(self.from_unit(u))

    def as_dict(self, x) -> dict:
        return {d.name: (int(v) if d.integer else float(v)) for d, v in zip(self.dims, x)}


@dataclass
class TrialRecord:
    index: int
    point: np.ndarray
    value: float
    diverged: bool
    lipschitz: float
    kind: str  # "init", "lipo", "local" or "explore"


@dataclass
class LipoResult:
    x: np.ndarray
    fun: float
    trials: list = field(default_factory=list)
    lipschitz: float = 0.0

    @property
    def incumbent_trace(self) -> np.ndarray:
        vals = np.array([t.value if not t.diverged else np.inf for t in self.trials])
        return np.minimum.accumulate(vals)


def _lipschitz_estimate(U: np.ndarray, f: np.ndarray, growth: float = 0.1) -> float:
    if len(f) < 2:
        return 0.0
    d = np.sqrt(((U[:, None, :] - U[None, :, :]) ** 2).sum(-1))
    df = np.abs(f[:, None] - f[None, :])
    mask = d > 0
    if not mask.any():
        return 0.0
    k = float(np.max(df[mask] / d[mask]))
    if k <= 0:
        return 0.0
    # round up onto the geometric grid (1 + growth)^i, so k_hat >= every observed slope
    i = math.ceil(math.log(k) / math.log1p(growth))
    k_hat = (1 + growth) ** i
    return k_hat if k_hat >= k else k_hat * (1 + growth)


def _penalized(values: np.ndarray, diverged: np.ndarray) -> np.ndarray:
    out = values.copy()
    finite = values[~diverged]
    if diverged.any():
        worst = float(finite.max()) if len(finite) else 1.0
        out[diverged] = worst + 9.0 * max(abs(worst), 1e-12)
    return out


def lipo_minimize(objective, box: HyperBox, num_iterations: int = 25, seed=None,
                  n_candidates: int = 4000, initial_radius: float = 0.1) -> LipoResult:
    """Minimize ``objective(x)`` over ``box`` with ``num_iterations`` evaluations.

    ``x`` is an array in box order (original units, integers rounded).
    Non-finite objective values mark the trial as diverged; such points are
    treated as ten times the worst finite value when bounding.
    """
    if num_iterations < 1:
        raise ValueError("num_iterations must be >= 1")
    rng = np.random.default_rng(seed)
    dim = len(box)
    U: list[np.ndarray] = []
    values: list[float] = []
    diverged: list[bool] = []
    trials: list[TrialRecord] = []
    radius = initial_radius
    k_hat = 0.0

    def seen(u) -> bool:
        return any(float(np.max(np.abs(u - v))) < 1e-9 for v in U)

    def evaluate(u, kind):
        nonlocal k_hat
        x = box.from_unit(u)
        fx = float(objective(x))
        bad = not math.isfinite(fx)
        U.append(u)
        values.append(fx if not bad else math.nan)
        diverged.append(bad)
        f = _penalized(np.array(values), np.array(diverged))
        k_hat = _lipschitz_estimate(np.array(U), f)
        trials.append(TrialRecord(len(trials), x, fx if not bad else math.nan, bad, k_hat, kind))
        log.debug("trial %d (%s): %s -> %s", len(trials) - 1, kind, x, fx)

    def explore():
        C = np.array([box.snap(c) for c in rng.random((min(n_candidates, 500), dim))])
        dist = np.sqrt(((C[:, None, :] - np.array(U)[None, :, :]) ** 2).sum(-1)).min(axis=1)
        return C[int(np.argmax(dist))] if dist.max() > 0 else None

    def lipo_step():
        C = rng.random((n_candidates, dim))
        f = _penalized(np.array(values), np.array(diverged))
        P = np.array(U)
        dist = np.sqrt(((C[:, None, :] - P[None, :, :]) ** 2).sum(-1))
        lower = (f[None, :] - k_hat * dist).max(axis=1)
        order = np.argsort(lower, kind="stable")
        best = float(f.min())
        if k_hat > 0:
            for i in order[:50]:
                if lower[i] >= best:
                    break
                u = box.snap(C[i])
                if not seen(u):
                    return u
        return None

    def local_step():
        f = _penalized(np.array(values), np.array(diverged))
        P = np.array(U)
        need = 2 * dim + 1
        if len(P) < need + 1:
            return None
        ib = int(np.argmin(f))
        center = P[ib]
        near = np.argsort(np.sqrt(((P - center) ** 2).sum(-1)), kind="stable")[: max(need + 2, 3 * dim + 2)]
        D = P[near] - center
        A = np.hstack([np.ones((len(near), 1)), D, 0.5 * D ** 2])
        coef, *_ = np.linalg.lstsq(A, f[near], rcond=None)
        g, h = coef[1:1 + dim], coef[1 + dim:]
        step = np.where(h > 1e-12, -g / np.where(h > 1e-12, h, 1.0), -np.sign(g) * radius)
        step = np.clip(step, -radius, radius)
        u = box.snap(np.clip(center + step, 0.0, 1.0))
        return None if seen(u) else u

    if box.collapsed:
        evaluate(box.snap(np.full(dim, 0.5)), "init")
        num_iterations = 1

    while len(trials) < num_iterations:
        it = len(trials)
        u, kind = None, "lipo"
        if it == 0:
            u, kind = box.snap(np.full(dim, 0.5)), "init"
        elif it % 2 == 1:
            before = float(np.nanmin(_penalized(np.array(values), np.array(diverged))))
            u, kind = local_step(), "local"
            if u is not None:
                evaluate(u, kind)
                improved = trials[-1].value < before if not trials[-1].diverged else False
                radius = min(0.5, radius * 2.0) if improved else max(1e-6, radius * 0.5)
                continue
            u, kind = lipo_step(), "lipo"
        else:
            u = lipo_step()
        if u is None:
            u, kind = explore(), "explore"
        if u is None:
            break  # every reachable point has been evaluated
        evaluate(u, kind)

    f = _penalized(np.array(values), np.array(diverged))
    finite = ~np.array(diverged)
    if finite.any():
        ib = int(np.flatnonzero(finite)[np.argmin(f[finite])])
    else:
        ib = 0
    return LipoResult(box.from_unit(U[ib]), values[ib], trials, k_hat)
