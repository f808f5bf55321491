"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ContractViolation, UnsupportedOpError
from .core import Graph, Tensor, backward
from .ops import OPS, apply

DENOM_FLOOR = 1e-8
GRADCHECK_WEIGHT_SEED = 12345


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), DENOM_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def numeric_gradient(f: Callable[[list[np.ndarray]], float], inputs: Sequence[np.ndarray], step: float) -> list[np.ndarray]:
    """Central differences ``(f(x+h) - f(x-h)) / 2h`` for every input element."""
    xs = [np.array(x, dtype=np.float64) for x in inputs]
    out = []
    for x in xs:
        g = np.zeros_like(x)
        flat, gflat = x.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            fp = f(xs)
            flat[j] = orig - step
            fm = f(xs)
            flat[j] = orig
            gflat[j] = (fp - fm) / (2.0 * step)
        out.append(g)
    return out


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    step: float = 1e-3,
    seed: int = 0,
) -> float:
    """Max relative error between backward() and finite differences.

    ``fn(graph, *tensors)`` must build a scalar on ``graph``. ``seed`` fixes
    the graph rng so stochastic steps replay identically on every call.
    """
    if not step > 0:
        raise ContractViolation(f"grad_check: step must be > 0, got {step}")
    inputs = [np.asarray(x, dtype=np.float64) for x in inputs]
    if not all(np.isfinite(x).all() for x in inputs):
        raise ContractViolation("grad_check: inputs must be finite")

    g = Graph(seed=seed)
    ts = [g.leaf(x, requires_grad=True) for x in inputs]
    loss = fn(g, *ts)
    grads = backward(g, loss)
    analytic = [grads.of(t) for t in ts]

    def f(xs):
        h = Graph(seed=seed)
        return float(fn(h, *[h.leaf(x, requires_grad=True) for x in xs]).values)

    numeric = numeric_gradient(f, inputs, step)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


def grad_check(op_kind: str, inputs: Sequence[np.ndarray], attrs: dict | None = None, step: float = 1e-3) -> float:
    """Check one catalog op; the output is contracted with fixed random weights."""
    op = OPS.get(op_kind)
    if op is None or not op.differentiable:
        raise UnsupportedOpError(f"op {op_kind!r} has no registered derivative")
    attrs = dict(attrs or {})
    out, _ = apply(op_kind, [np.asarray(x, dtype=np.float64) for x in inputs], attrs)
    weights = np.random.default_rng(GRADCHECK_WEIGHT_SEED).standard_normal(np.shape(out))

    def fn(g, *ts):
        y = g.forward(op_kind, list(ts), **attrs)
        return g.sum(g.mul(y, weights))

    return check_gradients(fn, inputs, step)
