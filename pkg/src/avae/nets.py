"""Dense MLP encoder/decoder, Glorot initialisation and Adam."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Graph

__all__ = [
    "MlpParams",
    "AdamState",
    "mlp_init",
    "mlp_forward",
    "encode",
    "decode",
    "mlp_graph",
    "adam_init",
    "adam_step",
]

HIDDEN_ACTIVATIONS = ("tanh", "relu")
OUTPUT_ACTIVATIONS = ("none", "sigmoid")


@dataclass
class MlpParams:
    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "tanh"
    output_activation: str = "none"

    def __post_init__(self):
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"hidden activation must be one of {HIDDEN_ACTIVATIONS}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output activation must be one of {OUTPUT_ACTIVATIONS}")
        sizes = self.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("need one weight matrix and bias vector per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape} do not match "
                                 f"sizes {sizes[i]} -> {sizes[i + 1]}")

    @property
    def d_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def d_out(self) -> int:
        return self.layer_sizes[-1]

    def arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.W{i}"] = w
            out[f"{prefix}.b{i}"] = b
        return out

    def with_arrays(self, arrays: dict[str, np.ndarray], prefix: str) -> "MlpParams":
        n = len(self.weights)
        return replace(self,
                       weights=[arrays[f"{prefix}.W{i}"] for i in range(n)],
                       biases=[arrays[f"{prefix}.b{i}"] for i in range(n)])

    def to_json(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "MlpParams":
        return cls(
            layer_sizes=[int(s) for s in doc["layer_sizes"]],
            weights=[np.asarray(w, dtype=np.float64).reshape(len(w), -1) for w in doc["weights"]],
            biases=[np.asarray(b, dtype=np.float64) for b in doc["biases"]],
            hidden_activation=doc["hidden_activation"],
            output_activation=doc["output_activation"],
        )


def mlp_init(layer_sizes, hidden_activation="tanh", output_activation="none",
             seed: int = 0) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ValueError(f"need at least two positive layer sizes, got {layer_sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        a = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(sizes, weights, biases, hidden_activation, output_activation)


def _act(name, a):
    if name == "tanh":
        return np.tanh(a)
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * a))
    return a


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.d_in:
        raise ValueError(f"input has shape {x.shape}, expected (batch, {params.d_in})")
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        x = x @ w.T + b
        x = _act(params.hidden_activation if i < last else params.output_activation, x)
    return x


def encode(encoder: MlpParams, x) -> np.ndarray:
    """Deterministic latent codes for a batch of inputs."""
    return mlp_forward(encoder, x)


def decode(decoder: MlpParams, z) -> np.ndarray:
    return mlp_forward(decoder, z)


def mlp_graph(g: Graph, x: int, params: MlpParams, prefix: str, param_nodes=None) -> int:
    """Append the forward pass of ``params`` to ``g``; returns the output node.

    Parameter leaves are named ``{prefix}.W{i}`` / ``{prefix}.b{i}``.  The
    ``param_nodes`` dict is filled in place; passing the same dict to a second
    call reuses the leaves for another input.
    """
    if param_nodes is None:
        param_nodes = {}
    last = len(params.weights) - 1
    h = x
    for i in range(len(params.weights)):
        wn, bn = f"{prefix}.W{i}", f"{prefix}.b{i}"
        if wn not in param_nodes:
            param_nodes[wn] = g.param(wn)
            param_nodes[wn + ".T"] = g.transpose(param_nodes[wn])
            param_nodes[bn] = g.param(bn)
        h = g.add_row(g.matmul(h, param_nodes[wn + ".T"]), param_nodes[bn])
        act = params.hidden_activation if i < last else params.output_activation
        if act == "tanh":
            h = g.tanh(h)
        elif act == "relu":
            h = g.relu(h)
        elif act == "sigmoid":
            h = g.sigmoid(h)
    return h


@dataclass
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_init(params: dict[str, np.ndarray], lr: float = 5e-4) -> AdamState:
    return AdamState(lr=lr, m={k: np.zeros_like(p) for k, p in params.items()},
                     v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(state: AdamState, params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray]) -> tuple[AdamState, dict[str, np.ndarray]]:
    """One bias-corrected Adam update; returns new state and parameters."""
    for k, p in params.items():
        if k not in grads or grads[k].shape != p.shape:
            raise ValueError(f"gradient for {k!r} missing or mis-shaped")
        if not np.all(np.isfinite(grads[k])):
            raise FloatingPointError(f"non-finite gradient entries in {k!r}")
        if state.m.get(k) is None or state.m[k].shape != p.shape:
            raise ValueError(f"optimizer moments for {k!r} do not match the parameter")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_m, new_v, new_p = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        new_m[k] = b1 * state.m[k] + (1 - b1) * g
        new_v[k] = b2 * state.v[k] + (1 - b2) * g * g
        mhat = new_m[k] / (1 - b1 ** t)
        vhat = new_v[k] / (1 - b2 ** t)
        new_p[k] = p - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return replace(state, step=t, m=new_m, v=new_v), new_p
