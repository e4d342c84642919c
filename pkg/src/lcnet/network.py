"""Residual ReLU feedforward network with hand-written reverse-mode gradients.

Layout of a network with ``B`` residual blocks (``K = 2B + 2`` layers)::

    s   = W_0 z + b_0                                   first linear layer
    u   = W_{2i+1} relu(s) + b_{2i+1}                    block i, inner layer
    s  <- s + W_{2i+2} relu(u) + b_{2i+2}                block i, outer layer
    y   = W_{K-1} s + b_{K-1}                           final linear layer

Weights are stored as ``(out, in)`` matrices and applied to row-major batches,
so a batch ``Z`` of shape ``(n, in)`` maps to ``Z @ W.T + b``.  Every block
carries its own skip flag; a block without skip simply drops the ``s +`` term.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "NetShape",
    "ParamSet",
    "ForwardTrace",
    "GradientSet",
    "init_he",
    "forward",
    "backward",
    "l2_penalty",
    "params_to_dict",
    "params_from_dict",
    "save_params",
    "load_params",
]


@dataclass(frozen=True)
class NetShape:
    input_dim: int
    hidden_dim: int
    num_residual_blocks: int
    output_dim: int = 1
    residual: bool = True

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "output_dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.num_residual_blocks < 0:
            raise ValueError("num_residual_blocks must be non-negative")

    @property
    def num_layers(self) -> int:
        return 2 * self.num_residual_blocks + 2

    def layer_dims(self) -> list[tuple[int, int]]:
        """``(out, in)`` for every layer in order."""
        h = self.hidden_dim
        dims = [(h, self.input_dim)]
        dims += [(h, h)] * (2 * self.num_residual_blocks)
        dims.append((self.output_dim, h))
        return dims


@dataclass
class ParamSet:
    """Weights and biases of every layer plus one skip flag per residual block."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    skips: tuple[bool, ...]

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        self.skips = tuple(bool(s) for s in self.skips)
        K = len(self.weights)
        if K < 2 or K % 2 or len(self.biases) != K:
            raise ValueError("a network needs an even number (>= 2) of layers with one bias each")
        if len(self.skips) != (K - 2) // 2:
            raise ValueError("need exactly one skip flag per residual block")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {k}: weight must be 2-D with a matching bias")
            if k > 0 and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k}: input width {w.shape[1]} does not chain")
        for i, skip in enumerate(self.skips):
            w_in, w_out = self.weights[2 * i + 1], self.weights[2 * i + 2]
            if skip and w_out.shape[0] != w_in.shape[1]:
                raise ValueError(f"block {i}: skip connection needs matching widths")

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def size(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays, interleaved ``[W_0, b_0, W_1, b_1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "ParamSet":
        return ParamSet([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.skips)


@dataclass
class ForwardTrace:
    """Input and every layer output (pre-activation) of one forward pass.

    ``layers[k]`` is stored feature-major with shape ``(width_k, n)``.
    """

    z: np.ndarray
    layers: list[np.ndarray] = field(default_factory=list)
    squeeze: bool = False

    @property
    def output(self) -> np.ndarray:
        y = self.layers[-1].T
        return y[0] if self.squeeze else y


@dataclass
class GradientSet:
    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]
    d_input: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.d_weights, self.d_biases):
            out += [w, b]
        return out


def _relu(a: np.ndarray) -> np.ndarray:
    return np.maximum(a, 0.0)


def init_he(shape: NetShape, seed=None) -> ParamSet:
    """He-normal weights (variance ``2 / fan_in``) and zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for out_dim, in_dim in shape.layer_dims():
        weights.append(rng.normal(0.0, np.sqrt(2.0 / in_dim), size=(out_dim, in_dim)))
        biases.append(np.zeros(out_dim))
    return ParamSet(weights, biases, (shape.residual,) * shape.num_residual_blocks)


def forward(params: ParamSet, z) -> tuple[np.ndarray, ForwardTrace]:
    """Evaluate the network on one input vector or a batch of row vectors.

    Returns the output (shape ``(output_dim,)`` for a vector input, otherwise
    ``(n, output_dim)``) and the trace needed by :func:`backward`.
    """
    z = np.asarray(z, dtype=np.float64)
    squeeze = z.ndim == 1
    Z = z[None, :] if squeeze else z
    if Z.ndim != 2 or Z.shape[1] != params.input_dim:
        raise ValueError(f"expected input width {params.input_dim}, got shape {z.shape}")

    # activations are kept feature-major, (width, n), which BLAS handles faster
    W, b = params.weights, params.biases
    s = W[0] @ Z.T
    s += b[0][:, None]
    layers = [s]
    for i, skip in enumerate(params.skips):
        k = 2 * i + 1
        u = W[k] @ _relu(s)
        u += b[k][:, None]
        delta = W[k + 1] @ _relu(u)
        delta += b[k + 1][:, None]
        s = s + delta if skip else delta
        layers += [u, s]
    y = W[-1] @ s
    y += b[-1][:, None]
    layers.append(y)
    trace = ForwardTrace(Z, layers, squeeze)
    return (y[:, 0] if squeeze else y.T), trace


def backward(params: ParamSet, trace: ForwardTrace, upstream) -> GradientSet:
    """Reverse-mode pass; gradients w.r.t. parameters are summed over the batch.

    ``upstream`` is dL/dy with the same shape as the forward output (a scalar
    is accepted for single-output networks).  ReLU has derivative 0 at 0.
    """
    K = params.num_layers
    if len(trace.layers) != K or trace.z.shape[1] != params.input_dim:
        raise ValueError("trace does not belong to a network of this shape")
    for k in range(K):
        if trace.layers[k].shape[0] != params.weights[k].shape[0]:
            raise ValueError(f"trace layer {k} does not match the parameters")

    n = trace.z.shape[0]
    g = np.asarray(upstream, dtype=np.float64)
    g = np.broadcast_to(g.reshape(-1, params.output_dim) if g.ndim else g, (n, params.output_dim)).T

    W, L = params.weights, trace.layers
    dW: list[np.ndarray] = [None] * K  # type: ignore[list-item]
    db: list[np.ndarray] = [None] * K  # type: ignore[list-item]

    dW[K - 1] = g @ L[K - 2].T
    db[K - 1] = g.sum(axis=1)
    ds = W[K - 1].T @ g

    for i in reversed(range(len(params.skips))):
        k = 2 * i + 1
        s_in, u = L[k - 1], L[k]
        dW[k + 1] = ds @ _relu(u).T
        db[k + 1] = ds.sum(axis=1)
        du = W[k + 1].T @ ds
        du *= u > 0
        dW[k] = du @ _relu(s_in).T
        db[k] = du.sum(axis=1)
        ds_in = W[k].T @ du
        ds_in *= s_in > 0
        if params.skips[i]:
            ds_in += ds
        ds = ds_in

    dW[0] = ds @ trace.z
    db[0] = ds.sum(axis=1)
    d_input = (W[0].T @ ds).T
    return GradientSet(dW, db, d_input[0] if trace.squeeze else d_input)


def l2_penalty(params: ParamSet) -> float:
    """Sum of squares of every weight and bias entry."""
    return float(sum(np.vdot(a, a) for a in params.arrays()))


def params_to_dict(params: ParamSet, shape: NetShape | None = None) -> dict:
    doc = {
        "format": "lcnet.params",
        "version": 1,
        "skips": list(params.skips),
        "layers": [
            {"rows": w.shape[0], "cols": w.shape[1], "weight": w.ravel().tolist(), "bias": b.tolist()}
            for w, b in zip(params.weights, params.biases)
        ],
    }
    if shape is not None:
        doc["shape"] = asdict(shape)
    return doc


def params_from_dict(doc: dict) -> tuple[ParamSet, NetShape | None]:
    if doc.get("format") != "lcnet.params":
        raise ValueError("not an lcnet parameter document")
    weights = [np.array(l["weight"], dtype=np.float64).reshape(l["rows"], l["cols"]) for l in doc["layers"]]
    biases = [np.array(l["bias"], dtype=np.float64) for l in doc["layers"]]
    shape = NetShape(**doc["shape"]) if doc.get("shape") else None
    return ParamSet(weights, biases, tuple(doc["skips"])), shape


def save_params(path, params: ParamSet, shape: NetShape | None = None) -> None:
    # json writes floats with repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(params_to_dict(params, shape)))


def load_params(path) -> tuple[ParamSet, NetShape | None]:
    return params_from_dict(json.loads(Path(path).read_text()))
