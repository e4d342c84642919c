"""Hand-specified networks with known closed-form behaviour.

* The pyramid network maps ``(x, beta)`` to a piecewise-linear double triangle
  through (0,0), (0.5,1), (1,0), (1.5,1), (2,0) at ``beta = 0``.  The
  ``beta`` column of the first layer selects how the task parameter acts:
  not at all, as a translation, or as a dilation of both axes by ``1 + beta``.
* The selector encoder turns a scalar task parameter ``beta = j`` into the
  one-hot vector ``c_j`` with triangles of half-width ``delta``, while copying
  ``x`` through.  Stacking it under a context-sensitive network gives a
  learned-context network with a single task parameter.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .network import NetShape, ParamSet, forward, init_he

__all__ = [
    "PyramidChoice",
    "PyramidSpec",
    "SelectorSpec",
    "Selector",
    "build_pyramid",
    "build_selector",
    "compose_selector",
    "verify_selector_composition",
    "lipschitz_bound",
    "run_checks",
]


class PyramidChoice(str, Enum):
    ZERO = "zero"
    TRANSLATION = "translation"
    DILATION = "dilation"


@dataclass(frozen=True)
class PyramidSpec:
    choice: PyramidChoice = PyramidChoice.ZERO

    def __post_init__(self):
        object.__setattr__(self, "choice", PyramidChoice(self.choice))


PYRAMID_B1 = -0.5 * np.arange(4.0)


def build_pyramid(spec: PyramidSpec | str = PyramidSpec()) -> tuple[ParamSet, NetShape]:
    """Pyramid network as a one-block network with the skip disabled.

    The three weight layers sit in the first layer and the block; the final
    layer just reads out the summed triangles.  Hidden layers are zero-padded
    to width 4 so the result has a uniform shape.
    """
    if not isinstance(spec, PyramidSpec):
        spec = PyramidSpec(spec)
    L = {
        PyramidChoice.ZERO: np.zeros(4),
        PyramidChoice.TRANSLATION: np.ones(4),  # the x column
        PyramidChoice.DILATION: PYRAMID_B1.copy(),
    }[spec.choice]
    W1 = np.column_stack([np.ones(4), L])
    W2 = np.zeros((4, 4))
    W2[:2] = [[2.0, -4.0, 0.0, 0.0], [0.0, 0.0, 2.0, -4.0]]
    W3 = np.zeros((4, 4))
    W3[0, :2] = 1.0
    out = np.zeros((1, 4))
    out[0, 0] = 1.0
    params = ParamSet([W1, W2, W3, out], [PYRAMID_B1.copy(), np.zeros(4), np.zeros(4), np.zeros(1)], (False,))
    return params, NetShape(2, 4, 1, 1, residual=False)


@dataclass(frozen=True)
class SelectorSpec:
    m: int
    delta: float = 0.25
    x_dim: int = 1

    def __post_init__(self):
        if self.m < 1 or self.x_dim < 0:
            raise ValueError("need m >= 1 and x_dim >= 0")
        if not 0.0 < self.delta < 0.5:
            raise ValueError("delta must lie strictly inside (0, 0.5)")


@dataclass
class Selector:
    """Two-layer encoder ``(x, beta) -> (x, c_hat)``.

    Rows of the hidden layers are ordered ``[relu(x), relu(-x), triangles]``;
    ``x`` is recovered as ``relu(x) - relu(-x)``.
    """

    spec: SelectorSpec
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def hidden(self, x, beta) -> np.ndarray:
        X = np.atleast_2d(np.asarray(x, dtype=np.float64)).reshape(-1, self.spec.x_dim)
        b = np.broadcast_to(np.asarray(beta, dtype=np.float64).reshape(-1, 1), (X.shape[0], 1))
        Z = np.hstack([X, b])
        h = np.maximum(Z @ self.W1.T + self.b1, 0.0)
        return np.maximum(h @ self.W2.T + self.b2, 0.0)

    def encode(self, x, beta) -> tuple[np.ndarray, np.ndarray]:
        d = self.spec.x_dim
        u = self.hidden(x, beta)
        return u[:, :d] - u[:, d:2 * d], u[:, 2 * d:]

    def one_hot(self, beta) -> np.ndarray:
        """``c_hat`` for each scalar ``beta`` (shape ``(len(beta), m)``)."""
        beta = np.atleast_1d(np.asarray(beta, dtype=np.float64))
        return self.encode(np.zeros((len(beta), self.spec.x_dim)), beta)[1]


def build_selector(spec: SelectorSpec, form: str = "exact") -> Selector:
    """Encoder weights for ``spec``.

    ``form="literal"`` uses biases ``-(j - delta, j)`` and the second layer
    ``(1/delta) I kron [1, -2]``.  ``form="exact"`` moves the ``1/delta`` into
    the first layer (same function, by positive homogeneity of ReLU) with
    biases ``1 - fl(j/delta)`` and ``-fl(j/delta)``, so that integer ``beta``
    gives an exact one-hot vector for every ``delta``; the literal form is
    exact only when ``delta`` is a power of two.
    """
    if form not in ("exact", "literal"):
        raise ValueError("form must be 'exact' or 'literal'")
    m, d, delta = spec.m, spec.x_dim, spec.delta
    j = np.arange(1, m + 1, dtype=np.float64)
    W1 = np.zeros((2 * d + 2 * m, d + 1))
    W1[:d, :d] = np.eye(d)
    W1[d:2 * d, :d] = -np.eye(d)
    b1 = np.zeros(2 * d + 2 * m)
    W2 = np.zeros((2 * d + m, 2 * d + 2 * m))
    W2[:2 * d, :2 * d] = np.eye(2 * d)
    if form == "literal":
        W1[2 * d:, d] = 1.0
        b1[2 * d:] = -np.column_stack([j - delta, j]).ravel()
        W2[2 * d:, 2 * d:] = np.kron(np.eye(m), [[1.0, -2.0]]) / delta
    else:
        w = 1.0 / delta
        p = w * j  # rounded exactly as the forward pass rounds w * beta at beta = j
        W1[2 * d:, d] = w
        b1[2 * d:] = np.column_stack([1.0 - p, -p]).ravel()  # 1 - p is representable for p >= 1
        W2[2 * d:, 2 * d:] = np.kron(np.eye(m), [[1.0, -2.0]])
    return Selector(spec, W1, b1, W2, np.zeros(2 * d + m))


def compose_selector(selector: Selector, cs_params: ParamSet) -> ParamSet:
    """One learned-context network: selector below, context-sensitive net on top.

    The selector's second layer becomes the inner layer of an extra no-skip
    block whose outer layer is the CS net's first layer, rewritten to read
    ``[relu(x), relu(-x), c_hat]``.
    """
    d, m = selector.spec.x_dim, selector.spec.m
    if cs_params.input_dim != d + m:
        raise ValueError(f"context-sensitive net must take {d + m} inputs, has {cs_params.input_dim}")
    W0 = cs_params.weights[0]
    A, B = W0[:, :d], W0[:, d:]
    first = np.hstack([A, -A, B])
    weights = [selector.W1, selector.W2, first] + cs_params.weights[1:]
    biases = [selector.b1, selector.b2, cs_params.biases[0]] + cs_params.biases[1:]
    return ParamSet(weights, biases, (False,) + cs_params.skips)


def verify_selector_composition(selector: Selector, cs_params: ParamSet, X, task_ids) -> float:
    """Max ``|composed(x, beta=j) - cs(x, c_j)|`` over the given inputs."""
    composed = compose_selector(selector, cs_params)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    ids = np.broadcast_to(np.asarray(task_ids), (X.shape[0],))
    if X.shape[1] != selector.spec.x_dim:
        raise ValueError("input width does not match the selector")
    if np.any((ids < 1) | (ids > selector.spec.m)):
        raise ValueError("task ids must lie in 1..m")
    C = np.eye(selector.spec.m)[ids - 1]
    direct, _ = forward(cs_params, np.hstack([X, C]))
    via, _ = forward(composed, np.hstack([X, ids.astype(np.float64)[:, None]]))
    return float(np.max(np.abs(via - direct)))


def lipschitz_bound(params: ParamSet) -> float:
    """Upper bound on the network's Lipschitz constant (2-norm, ReLU is 1-Lipschitz)."""
    W = params.weights
    norm = lambda a: float(np.linalg.norm(a, 2))
    bound = norm(W[0])
    for i, skip in enumerate(params.skips):
        inner = norm(W[2 * i + 1]) * norm(W[2 * i + 2])
        bound *= (1.0 + inner) if skip else inner
    return bound * norm(W[-1])


def _pyramid_eval(params, x, beta):
    x = np.asarray(x, dtype=np.float64)
    Z = np.column_stack([x, np.broadcast_to(beta, x.shape)])
    return forward(params, Z)[0][:, 0]


def run_checks(perturbation: float = 0.0, seed=0, tolerance: float = 1e-12) -> list[dict]:
    """Evaluate every construction identity.

    ``perturbation`` is added to all weights of the constructed networks
    (not to the reference values), which should make the checks fail.
    Returns one record per check with its deviation and tolerance.
    """
    rng = np.random.default_rng(seed)

    def nudge(p: ParamSet) -> ParamSet:
        return ParamSet([w + perturbation for w in p.weights], p.biases, p.skips) if perturbation else p

    checks = []

    def record(name, deviation, tol=tolerance):
        checks.append({"check": name, "max_deviation": float(deviation), "tolerance": tol,
                       "passed": bool(deviation <= tol)})

    knots = np.array([0.0, 0.5, 1.0, 1.5, 2.0])
    base = nudge(build_pyramid("zero")[0])
    record("pyramid_interpolation", np.max(np.abs(_pyramid_eval(base, knots, 0.0) - [0, 1, 0, 1, 0])))

    grid = np.linspace(-1.0, 3.0, 101)
    exact0 = build_pyramid("zero")[0]
    trans = nudge(build_pyramid("translation")[0])
    dev = max(np.max(np.abs(_pyramid_eval(trans, grid, b) - _pyramid_eval(exact0, grid + b, 0.0)))
              for b in np.linspace(-0.5, 0.5, 11))
    record("pyramid_translation", dev)

    dil = nudge(build_pyramid("dilation")[0])
    dev = max(np.max(np.abs(_pyramid_eval(dil, (1 + b) * grid, b) - (1 + b) * _pyramid_eval(exact0, grid, 0.0)))
              for b in np.linspace(-0.9, 0.9, 13))
    record("pyramid_dilation", dev)

    m = 4
    sel = build_selector(SelectorSpec(m=m, delta=0.25, x_dim=2))
    if perturbation:
        sel = Selector(sel.spec, sel.W1 + perturbation, sel.b1, sel.W2 + perturbation, sel.b2)
    c = sel.one_hot(np.arange(1, m + 1))
    record("selector_one_hot", np.max(np.abs(c - np.eye(m))), 0.0)

    shape = NetShape(2 + m, 16, 2)
    cs = init_he(shape, rng)
    cs.biases = [rng.normal(size=b.shape) for b in cs.biases]
    X = rng.normal(size=(100, 2))
    ids = rng.integers(1, m + 1, size=100)
    record("selector_composition", verify_selector_composition(sel, cs, X, ids))
    return checks
