"""Tensors, computation graphs and reverse-mode differentiation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from ..errors import ContractViolation, UnsupportedOpError
from . import ops as _ops


class Tensor:
    """Immutable float64 array, optionally registered as a node of a :class:`Graph`."""

    __slots__ = ("values", "requires_grad", "node_id")

    def __init__(self, values, requires_grad: bool = False, node_id: int | None = None):
        arr = np.array(values, dtype=np.float64)
        arr.setflags(write=False)
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.node_id = node_id

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool, node_id: int) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        arr.setflags(write=False)
        t.values = arr
        t.requires_grad = requires_grad
        t.node_id = node_id
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, node_id={self.node_id})"


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    output: Tensor
    ctx: Any = None
    attrs: dict = field(default_factory=dict)
    name: str | None = None


class Graph:
    """Append-only record of a forward computation.

    Inputs always precede outputs, so the node list is a topological order
    and the graph is acyclic by construction. ``rng`` is the only source of
    randomness for stochastic steps recorded against this graph.
    """

    def __init__(self, seed: int | None = 0, check_finite: bool = True):
        self.nodes: list[Node] = []
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.check_finite = check_finite
        self.first_nonfinite: int | None = None

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, values, requires_grad: bool = False, name: str | None = None) -> Tensor:
        t = Tensor(values, requires_grad=requires_grad, node_id=len(self.nodes))
        self.nodes.append(Node("leaf", (), t, name=name))
        return t

    def owns(self, t: Tensor) -> bool:
        return t.node_id is not None and t.node_id < len(self.nodes) and self.nodes[t.node_id].output is t

    def _adopt(self, x) -> Tensor:
        if isinstance(x, Tensor):
            if self.owns(x):
                return x
            return self.leaf(x.values, requires_grad=x.requires_grad)
        return self.leaf(x)

    def forward(self, op_kind: str, inputs: Sequence, **attrs) -> Tensor:
        ts = [self._adopt(x) for x in inputs]
        out, ctx = _ops.apply(op_kind, [t.values for t in ts], attrs)
        rg = any(t.requires_grad for t in ts)
        t = Tensor._wrap(out, rg, len(self.nodes))
        self.nodes.append(Node(op_kind, tuple(x.node_id for x in ts), t, ctx, attrs))
        if self.check_finite and self.first_nonfinite is None and not np.isfinite(t.values).all():
            self.first_nonfinite = t.node_id
        return t

    def describe(self, node_id: int) -> str:
        node = self.nodes[node_id]
        shapes = [self.nodes[i].output.shape for i in node.inputs]
        return f"node {node_id} ({node.op}, inputs {shapes} -> {node.output.shape})"

    # thin wrappers so model code reads naturally
    def matmul(self, a, b): return self.forward("matmul", [a, b])
    def add(self, a, b): return self.forward("add", [a, b])
    def sub(self, a, b): return self.forward("sub", [a, b])
    def mul(self, a, b): return self.forward("mul_elementwise", [a, b])
    def div(self, a, b): return self.forward("div", [a, b])
    def scale(self, a, factor): return self.forward("scale", [a], factor=factor)
    def relu(self, a): return self.forward("relu", [a])
    def clamp(self, a, lo=None, hi=None): return self.forward("clamp", [a], lo=lo, hi=hi)
    def mask_zero(self, a, indices, axis=-1): return self.forward("mask_zero", [a], indices=indices, axis=axis)
    def concat(self, xs, axis=0): return self.forward("concat", list(xs), axis=axis)
    def slice(self, a, start, stop, axis=0): return self.forward("slice", [a], start=start, stop=stop, axis=axis)
    def reshape(self, a, shape): return self.forward("reshape", [a], shape=tuple(shape))
    def transpose(self, a, axes=None): return self.forward("transpose", [a], axes=axes)
    def sum(self, a, axis=None, keepdims=False): return self.forward("sum", [a], axis=axis, keepdims=keepdims)
    def mean(self, a, axis=None, keepdims=False): return self.forward("mean", [a], axis=axis, keepdims=keepdims)
    def max(self, a, axis=-1, keepdims=False): return self.forward("max", [a], axis=axis, keepdims=keepdims)
    def softmax(self, a, axis=-1, temperature=1.0): return self.forward("softmax", [a], axis=axis, temperature=temperature)
    def l2_normalize(self, a, axis=-1): return self.forward("l2_normalize", [a], axis=axis)
    def cosine_similarity(self, a, b, axis=-1): return self.forward("cosine_similarity", [a, b], axis=axis)
    def bce_mean(self, p, target): return self.forward("bce_mean", [p], target=target)
    def mse_mean(self, a, b): return self.forward("mse_mean", [a, b])
    def cross_entropy(self, logits, labels): return self.forward("cross_entropy", [logits], labels=labels)

    def conv1d_temporal(self, x, w, stride=1, dilation=1):
        return self.forward("conv1d_temporal", [x, w], stride=stride, dilation=dilation)


class Gradients(dict):
    """Map from node id to the gradient of the loss with respect to that node."""

    def of(self, t: Tensor) -> np.ndarray:
        return self[t.node_id]


def backward(graph: Graph, loss: Tensor) -> Gradients:
    """Reverse-mode sweep from a scalar ``loss``.

    Returns gradients for every leaf that requires a gradient; leaves the
    loss does not depend on get zeros.
    """
    if not graph.owns(loss):
        raise ContractViolation("backward: loss tensor does not belong to this graph")
    if loss.values.size != 1:
        raise ContractViolation(f"backward: loss must be scalar, got shape {loss.shape}")

    nodes = graph.nodes
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones(loss.shape)}
    for idx in range(loss.node_id, -1, -1):
        node = nodes[idx]
        if node.op == "leaf":
            continue
        g = grads.pop(idx, None)
        if g is None:
            continue
        ins = [nodes[i].output for i in node.inputs]
        needs = [t.requires_grad for t in ins]
        if not any(needs):
            continue
        op = _ops.OPS[node.op]
        if op.backward is None:
            raise UnsupportedOpError(f"op {node.op!r} has no registered derivative")
        in_grads = op.backward(g, [t.values for t in ins], node.output.values, node.ctx, node.attrs, needs)
        for i, gi, need in zip(node.inputs, in_grads, needs):
            if not need or gi is None:
                continue
            prev = grads.get(i)
            grads[i] = gi if prev is None else prev + gi

    out = Gradients()
    for i, node in enumerate(nodes):
        if node.op == "leaf" and node.output.requires_grad:
            g = grads.get(i)
            out[i] = np.zeros(node.output.shape) if g is None else np.array(g, dtype=np.float64).reshape(node.output.shape)
    return out
