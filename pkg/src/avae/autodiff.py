"""Small reverse-mode automatic differentiation engine over dense float64 arrays.

A :class:`Graph` is a Wengert list: every builder method appends one node and
returns its integer id, so the node list is topologically ordered by
construction.  Leaves are either ``input`` nodes (constants, no gradient) or
``param`` nodes (differentiated).  Both are bound by name at evaluation time::

    g = Graph()
    x = g.input("x")
    w = g.param("w")
    loss = g.sum_squares(g.matmul(x, w))
    g.set_output(loss)
    value = evaluate(g, {"x": X, "w": W})
    grads = gradient(g, {"x": X, "w": W})   # {"w": dloss/dW}

Only the handful of operations needed for MLPs and Gaussian KDE log-densities
are supported.  Broadcasting is explicit (``add_row``, ``add_col``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

__all__ = [
    "AutodiffError",
    "ShapeError",
    "NonFiniteError",
    "GraphStateError",
    "Graph",
    "evaluate",
    "gradient",
    "check_gradient",
]


class AutodiffError(Exception):
    """Base class for graph construction and evaluation errors."""


class ShapeError(AutodiffError, ValueError):
    def __init__(self, node_id: int, op: str, message: str):
        self.node_id = node_id
        self.op = op
        super().__init__(f"node {node_id} ({op}): {message}")


class NonFiniteError(AutodiffError, FloatingPointError):
    def __init__(self, node_id: int, op: str):
        self.node_id = node_id
        self.op = op
        super().__init__(f"node {node_id} ({op}) produced a non-finite value")


class GraphStateError(AutodiffError, RuntimeError):
    pass


@dataclass
class Node:
    op: str
    args: tuple[int, ...] = ()
    name: str | None = None
    const: float | None = None
    value: np.ndarray | None = field(default=None, repr=False)


def _logsumexp(a: np.ndarray) -> np.ndarray:
    # max-shift along the last axis
    m = np.max(a, axis=-1, keepdims=True)
    out = np.log(np.sum(np.exp(a - m), axis=-1)) + m[..., 0]
    return out


def _sigmoid(a: np.ndarray) -> np.ndarray:
    # overflow-free form
    return 0.5 * (1.0 + np.tanh(0.5 * a))


class Graph:
    """Append-only computation graph with a single scalar output."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.output: int | None = None
        self._bound: dict[str, np.ndarray] | None = None
        self._leaf_ids: dict[str, int] = {}

    # -- construction -----------------------------------------------------

    def _add(self, op, args=(), name=None, const=None) -> int:
        for a in args:
            if not (0 <= a < len(self.nodes)):
                raise AutodiffError(f"{op}: unknown input node {a}")
        self.nodes.append(Node(op, tuple(args), name, const))
        self._bound = None
        return len(self.nodes) - 1

    def _leaf(self, op, name):
        if name in self._leaf_ids:
            raise AutodiffError(f"duplicate leaf name {name!r}")
        idx = self._add(op, name=name)
        self._leaf_ids[name] = idx
        return idx

    def input(self, name: str) -> int:
        return self._leaf("input", name)

    def param(self, name: str) -> int:
        return self._leaf("param", name)

    def matmul(self, a, b):
        return self._add("matmul", (a, b))

    def transpose(self, a):
        return self._add("transpose", (a,))

    def add(self, a, b):
        return self._add("add", (a, b))

    def sub(self, a, b):
        return self._add("sub", (a, b))

    def add_row(self, a, v):
        """``a[i, j] + v[j]`` (bias add)."""
        return self._add("add_row", (a, v))

    def add_col(self, a, v):
        """``a[i, j] + v[i]``."""
        return self._add("add_col", (a, v))

    def tanh(self, a):
        return self._add("tanh", (a,))

    def relu(self, a):
        return self._add("relu", (a,))

    def sigmoid(self, a):
        return self._add("sigmoid", (a,))

    def square(self, a):
        return self._add("square", (a,))

    def sum_squares(self, a):
        return self._add("sum_squares", (a,))

    def row_sum(self, a):
        return self._add("row_sum", (a,))

    def sum(self, a):
        return self._add("sum", (a,))

    def mean(self, a):
        return self._add("mean", (a,))

    def logsumexp(self, a):
        """Log-sum-exp over the last axis: vector -> scalar, matrix -> vector."""
        return self._add("logsumexp", (a,))

    def scale(self, a, c: float):
        return self._add("scale", (a,), const=float(c))

    def shift(self, a, c: float):
        return self._add("shift", (a,), const=float(c))

    def set_output(self, node_id: int) -> None:
        if not (0 <= node_id < len(self.nodes)):
            raise AutodiffError(f"unknown output node {node_id}")
        self.output = node_id
        self._bound = None

    @property
    def param_names(self) -> list[str]:
        return [n.name for n in self.nodes if n.op == "param"]

    # -- forward ----------------------------------------------------------

    def _forward_node(self, i: int, node: Node) -> np.ndarray:
        vals = [self.nodes[a].value for a in node.args]
        op = node.op

        def fail(msg):
            raise ShapeError(i, op, msg)

        if op == "matmul":
            a, b = vals
            if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
                fail(f"cannot multiply {a.shape} by {b.shape}")
            return a @ b
        if op == "transpose":
            (a,) = vals
            if a.ndim != 2:
                fail(f"expected a matrix, got shape {a.shape}")
            return np.ascontiguousarray(a.T)
        if op in ("add", "sub"):
            a, b = vals
            if a.shape != b.shape:
                fail(f"shape mismatch {a.shape} vs {b.shape}")
            return a + b if op == "add" else a - b
        if op == "add_row":
            a, v = vals
            if a.ndim != 2 or v.shape != (a.shape[1],):
                fail(f"cannot add row vector {v.shape} to {a.shape}")
            return a + v[None, :]
        if op == "add_col":
            a, v = vals
            if a.ndim != 2 or v.shape != (a.shape[0],):
                fail(f"cannot add column vector {v.shape} to {a.shape}")
            return a + v[:, None]
        (a,) = vals
        if op == "tanh":
            return np.tanh(a)
        if op == "relu":
            return np.maximum(a, 0.0)
        if op == "sigmoid":
            return _sigmoid(a)
        if op == "square":
            return a * a
        if op == "sum_squares":
            return np.asarray(np.sum(a * a))
        if op == "row_sum":
            if a.ndim != 2:
                fail(f"expected a matrix, got shape {a.shape}")
            return a.sum(axis=1)
        if op == "sum":
            return np.asarray(np.sum(a))
        if op == "mean":
            if a.size == 0:
                fail("mean of an empty array")
            return np.asarray(np.mean(a))
        if op == "logsumexp":
            if a.ndim not in (1, 2) or a.shape[-1] == 0:
                fail(f"expected a non-empty vector or matrix, got shape {a.shape}")
            return np.asarray(_logsumexp(a))
        if op == "scale":
            return a * node.const
        if op == "shift":
            return a + node.const
        raise AutodiffError(f"node {i}: unknown operation {op!r}")

    def evaluate(self, inputs: Mapping[str, np.ndarray]) -> float:
        if self.output is None:
            raise GraphStateError("graph has no output node")
        bound = {}
        for i, node in enumerate(self.nodes):
            if node.op in ("input", "param"):
                if node.name not in inputs:
                    raise AutodiffError(f"node {i}: no binding for {node.op} {node.name!r}")
                val = np.asarray(inputs[node.name], dtype=np.float64)
                bound[node.name] = val
            else:
                # overflow surfaces as NonFiniteError below
                with np.errstate(over="ignore", invalid="ignore"):
                    val = self._forward_node(i, node)
            if not np.all(np.isfinite(val)):
                raise NonFiniteError(i, node.op)
            node.value = val
        out = self.nodes[self.output].value
        if out.size != 1:
            raise ShapeError(self.output, self.nodes[self.output].op,
                             f"loss must be a single value, got shape {out.shape}")
        self._bound = bound
        return float(out.reshape(()))

    # -- backward ---------------------------------------------------------

    def _check_bindings(self, inputs):
        if self._bound is None:
            raise GraphStateError("backward pass requested on an unevaluated graph")
        for name, val in self._bound.items():
            if name not in inputs or not np.array_equal(np.asarray(inputs[name]), val):
                raise GraphStateError(
                    f"bindings differ from the last evaluation (at {name!r}); evaluate first")

    def gradient(self, inputs: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        self._check_bindings(inputs)
        # only nodes that reach the output need adjoints
        needed = [False] * len(self.nodes)
        needed[self.output] = True
        for i in range(self.output, -1, -1):
            if needed[i]:
                for a in self.nodes[i].args:
                    needed[a] = True

        adj: dict[int, np.ndarray] = {self.output: np.ones_like(self.nodes[self.output].value)}
        for i in range(self.output, -1, -1):
            node = self.nodes[i]
            if i not in adj or not node.args:
                continue
            g = adj.pop(i)
            for a, ga in zip(node.args, self._backward_node(node, g)):
                if ga is None or not needed[a]:
                    continue
                adj[a] = adj[a] + ga if a in adj else ga

        grads = {}
        for i, node in enumerate(self.nodes):
            if node.op == "param":
                grads[node.name] = adj.get(i, np.zeros_like(node.value))
        return grads

    def _backward_node(self, node: Node, g: np.ndarray):
        vals = [self.nodes[a].value for a in node.args]
        out = node.value
        op = node.op
        if op == "matmul":
            a, b = vals
            return g @ b.T, a.T @ g
        if op == "transpose":
            return (g.T,)
        if op == "add":
            return g, g
        if op == "sub":
            return g, -g
        if op == "add_row":
            return g, g.sum(axis=0)
        if op == "add_col":
            return g, g.sum(axis=1)
        (a,) = vals
        if op == "tanh":
            return (g * (1.0 - out * out),)
        if op == "relu":
            # subgradient at 0 is 0
            return (g * (a > 0),)
        if op == "sigmoid":
            return (g * out * (1.0 - out),)
        if op == "square":
            return (2.0 * a * g,)
        if op == "sum_squares":
            return (2.0 * a * g,)
        if op == "row_sum":
            return (np.repeat(g[:, None], a.shape[1], axis=1),)
        if op == "sum":
            return (np.full_like(a, g),)
        if op == "mean":
            return (np.full_like(a, g / a.size),)
        if op == "logsumexp":
            w = np.exp(a - out[..., None])
            return (w * g[..., None],)
        if op == "scale":
            return (g * node.const,)
        if op == "shift":
            return (g,)
        raise AutodiffError(f"no backward rule for {op!r}")


def evaluate(graph: Graph, inputs: Mapping[str, np.ndarray]) -> float:
    """Run the forward pass and return the scalar output."""
    return graph.evaluate(inputs)


def gradient(graph: Graph, inputs: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Reverse-mode gradient of the output w.r.t. every ``param`` node.

    ``graph`` must have been evaluated on the same bindings.
    """
    return graph.gradient(inputs)


def _relative_error(auto: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.linalg.norm(auto - numeric) / (np.linalg.norm(numeric) + 1e-12))


def numerical_gradient(f: Callable[[dict], float], inputs: Mapping[str, np.ndarray],
                       names, step: float = 1e-5) -> dict[str, np.ndarray]:
    """Central finite differences of ``f(inputs)`` for the named arrays."""
    if step <= 0:
        raise ValueError(f"finite-difference step must be positive, got {step}")
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in inputs.items()}
    out = {}
    for name in names:
        arr = work[name]
        grad = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), grad.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            fp = f(work)
            flat[k] = orig - step
            fm = f(work)
            flat[k] = orig
            gflat[k] = (fp - fm) / (2 * step)
        out[name] = grad
    return out


def check_gradient(graph: Graph, inputs: Mapping[str, np.ndarray], step: float = 1e-5) -> float:
    """Largest relative discrepancy between autodiff and central differences.

    The error of each parameter array is ``||auto - fd|| / (||fd|| + 1e-12)``
    (Euclidean norms over the array); the maximum over parameters is returned.
    """
    if step <= 0:
        raise ValueError(f"finite-difference step must be positive, got {step}")
    graph.evaluate(inputs)
    auto = graph.gradient(inputs)
    numeric = numerical_gradient(graph.evaluate, inputs, list(auto), step)
    graph.evaluate(inputs)
    if not auto:
        return 0.0
    return max(_relative_error(auto[k], numeric[k]) for k in auto)
