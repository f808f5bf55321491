"""Operator catalog.

Each operator is a pair of plain functions over numpy arrays:

* ``forward(xs, attrs) -> (out, ctx)``
* ``backward(g, xs, out, ctx, attrs, needs) -> list of input gradients``

``needs[i]`` is False when input ``i`` does not require a gradient, in which
case the backward function may return ``None`` for it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from ..errors import ContractViolation

BCE_EPS = 1e-7


@dataclass(frozen=True)
class Op:
    name: str
    forward: Callable[..., tuple[np.ndarray, Any]]
    backward: Callable[..., list] | None
    arity: int | None  # None: variadic

    @property
    def differentiable(self) -> bool:
        return self.backward is not None


OPS: dict[str, Op] = {}


def register(name: str, arity: int | None = 1, differentiable: bool = True):
    def deco(fwd):
        def wrap_bwd(bwd):
            OPS[name] = Op(name, fwd, bwd, arity)
            return bwd

        if not differentiable:
            OPS[name] = Op(name, fwd, None, arity)
            return fwd
        fwd.backward = wrap_bwd
        return fwd

    return deco


def _violation(op: str, msg: str) -> ContractViolation:
    return ContractViolation(f"{op}: {msg}")


def _axis(op: str, axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise _violation(op, f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


def _axes(op: str, axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, (int, np.integer)):
        axis = (int(axis),)
    return tuple(sorted({_axis(op, a, ndim) for a in axis}))


def _broadcast(op: str, a: np.ndarray, b: np.ndarray) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _violation(op, f"shapes {a.shape} and {b.shape} do not broadcast") from None


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return g


# --------------------------------------------------------------------- linear


@register("matmul", arity=2)
def _matmul_fwd(xs, attrs):
    a, b = xs
    if a.ndim < 2 or b.ndim < 2:
        raise _violation("matmul", f"operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise _violation("matmul", f"inner dims differ: {a.shape[-1]} vs {b.shape[-2]} ({a.shape} @ {b.shape})")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise _violation("matmul", f"batch dims {a.shape[:-2]} and {b.shape[:-2]} do not broadcast") from None
    if a.ndim == 2 and b.ndim > 2:
        # left-multiply every stacked matrix by one shared matrix, as one gemm
        out = np.moveaxis(np.tensordot(a, b, axes=([1], [b.ndim - 2])), 0, -2)
        return np.ascontiguousarray(out), None
    if b.ndim == 2 and a.ndim > 2:
        out = (a.reshape(-1, a.shape[-1]) @ b).reshape(*a.shape[:-1], b.shape[-1])
        return out, None
    return np.matmul(a, b), None


@_matmul_fwd.backward
def _matmul_bwd(g, xs, out, ctx, attrs, needs):
    a, b = xs
    ga = gb = None
    if a.ndim == 2 and b.ndim > 2:
        if needs[0]:
            g2 = np.moveaxis(g, -2, 0).reshape(g.shape[-2], -1)
            b2 = np.moveaxis(b, -2, 0).reshape(b.shape[-2], -1)
            ga = g2 @ b2.T
        if needs[1]:
            gb = np.ascontiguousarray(np.moveaxis(np.tensordot(a.T, g, axes=([1], [g.ndim - 2])), 0, -2))
        return [ga, gb]
    if b.ndim == 2 and a.ndim > 2:
        g2 = g.reshape(-1, g.shape[-1])
        if needs[0]:
            ga = (g2 @ b.T).reshape(a.shape)
        if needs[1]:
            gb = a.reshape(-1, a.shape[-1]).T @ g2
        return [ga, gb]
    if needs[0]:
        ga = unbroadcast(np.matmul(g, np.swapaxes(b, -1, -2)), a.shape)
    if needs[1]:
        gb = unbroadcast(np.matmul(np.swapaxes(a, -1, -2), g), b.shape)
    return [ga, gb]


# ----------------------------------------------------------------- elementwise


@register("add", arity=2)
def _add_fwd(xs, attrs):
    _broadcast("add", *xs)
    return xs[0] + xs[1], None


@_add_fwd.backward
def _add_bwd(g, xs, out, ctx, attrs, needs):
    return [unbroadcast(g, xs[0].shape) if needs[0] else None,
            unbroadcast(g, xs[1].shape) if needs[1] else None]


@register("sub", arity=2)
def _sub_fwd(xs, attrs):
    _broadcast("sub", *xs)
    return xs[0] - xs[1], None


@_sub_fwd.backward
def _sub_bwd(g, xs, out, ctx, attrs, needs):
    return [unbroadcast(g, xs[0].shape) if needs[0] else None,
            unbroadcast(-g, xs[1].shape) if needs[1] else None]


@register("mul_elementwise", arity=2)
def _mul_fwd(xs, attrs):
    _broadcast("mul_elementwise", *xs)
    return xs[0] * xs[1], None


@_mul_fwd.backward
def _mul_bwd(g, xs, out, ctx, attrs, needs):
    a, b = xs
    return [unbroadcast(g * b, a.shape) if needs[0] else None,
            unbroadcast(g * a, b.shape) if needs[1] else None]


@register("div", arity=2)
def _div_fwd(xs, attrs):
    _broadcast("div", *xs)
    return xs[0] / xs[1], None


@_div_fwd.backward
def _div_bwd(g, xs, out, ctx, attrs, needs):
    a, b = xs
    return [unbroadcast(g / b, a.shape) if needs[0] else None,
            unbroadcast(-g * a / (b * b), b.shape) if needs[1] else None]


@register("scale")
def _scale_fwd(xs, attrs):
    return xs[0] * float(attrs["factor"]), None


@_scale_fwd.backward
def _scale_bwd(g, xs, out, ctx, attrs, needs):
    return [g * float(attrs["factor"])]


@register("relu")
def _relu_fwd(xs, attrs):
    return np.maximum(xs[0], 0.0), None


@_relu_fwd.backward
def _relu_bwd(g, xs, out, ctx, attrs, needs):
    return [g * (xs[0] > 0)]


@register("clamp")
def _clamp_fwd(xs, attrs):
    lo, hi = attrs.get("lo"), attrs.get("hi")
    if lo is not None and hi is not None and lo > hi:
        raise _violation("clamp", f"lo {lo} > hi {hi}")
    return np.clip(xs[0], lo, hi), None


@_clamp_fwd.backward
def _clamp_bwd(g, xs, out, ctx, attrs, needs):
    x = xs[0]
    lo, hi = attrs.get("lo"), attrs.get("hi")
    inside = np.ones(x.shape, dtype=bool)
    if lo is not None:
        inside &= x >= lo
    if hi is not None:
        inside &= x <= hi
    return [g * inside]


@register("mask_zero")
def _mask_zero_fwd(xs, attrs):
    x = xs[0]
    axis = _axis("mask_zero", attrs.get("axis", -1), x.ndim)
    idx = np.asarray(attrs["indices"], dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[axis]):
        raise _violation("mask_zero", f"indices out of range for axis {axis} of size {x.shape[axis]}")
    keep = np.ones(x.shape[axis])
    keep[idx] = 0.0
    shape = [1] * x.ndim
    shape[axis] = x.shape[axis]
    keep = keep.reshape(shape)
    return x * keep, keep


@_mask_zero_fwd.backward
def _mask_zero_bwd(g, xs, out, keep, attrs, needs):
    return [g * keep]


# ------------------------------------------------------------------ structure


@register("concat", arity=None)
def _concat_fwd(xs, attrs):
    if not xs:
        raise _violation("concat", "needs at least one input")
    axis = _axis("concat", attrs.get("axis", 0), xs[0].ndim)
    ref = xs[0].shape
    for x in xs[1:]:
        if x.ndim != len(ref) or any(x.shape[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise _violation("concat", f"shape {x.shape} does not match {ref} outside axis {axis}")
    return np.concatenate(xs, axis=axis), (axis, np.cumsum([x.shape[axis] for x in xs])[:-1])


@_concat_fwd.backward
def _concat_bwd(g, xs, out, ctx, attrs, needs):
    axis, splits = ctx
    parts = np.split(g, splits, axis=axis)
    return [p if n else None for p, n in zip(parts, needs)]


@register("slice")
def _slice_fwd(xs, attrs):
    x = xs[0]
    axis = _axis("slice", attrs.get("axis", 0), x.ndim)
    start, stop = int(attrs["start"]), int(attrs["stop"])
    if not 0 <= start < stop <= x.shape[axis]:
        raise _violation("slice", f"range [{start}, {stop}) invalid for axis {axis} of size {x.shape[axis]}")
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, stop)
    return x[tuple(sl)], tuple(sl)


@_slice_fwd.backward
def _slice_bwd(g, xs, out, sl, attrs, needs):
    gx = np.zeros_like(xs[0])
    gx[sl] = g
    return [gx]


@register("reshape")
def _reshape_fwd(xs, attrs):
    x = xs[0]
    shape = tuple(int(s) for s in attrs["shape"])
    if math.prod(shape) != x.size or any(s <= 0 for s in shape):
        raise _violation("reshape", f"cannot reshape {x.shape} to {shape}")
    return x.reshape(shape), None


@_reshape_fwd.backward
def _reshape_bwd(g, xs, out, ctx, attrs, needs):
    return [g.reshape(xs[0].shape)]


@register("transpose")
def _transpose_fwd(xs, attrs):
    x = xs[0]
    axes = attrs.get("axes")
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(int(a) for a in axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)) or len(axes) != x.ndim:
        raise _violation("transpose", f"axes {axes} are not a permutation of rank {x.ndim}")
    return np.transpose(x, axes), axes


@_transpose_fwd.backward
def _transpose_bwd(g, xs, out, axes, attrs, needs):
    return [np.transpose(g, np.argsort(axes))]


# ---------------------------------------------------------------- reductions


def _expand(g: np.ndarray, shape, axes, keepdims: bool) -> np.ndarray:
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


@register("sum")
def _sum_fwd(xs, attrs):
    x = xs[0]
    axes = _axes("sum", attrs.get("axis"), x.ndim)
    return x.sum(axis=axes, keepdims=attrs.get("keepdims", False)), axes


@_sum_fwd.backward
def _sum_bwd(g, xs, out, axes, attrs, needs):
    return [np.array(_expand(g, xs[0].shape, axes, attrs.get("keepdims", False)))]


@register("mean")
def _mean_fwd(xs, attrs):
    x = xs[0]
    axes = _axes("mean", attrs.get("axis"), x.ndim)
    return x.mean(axis=axes, keepdims=attrs.get("keepdims", False)), axes


@_mean_fwd.backward
def _mean_bwd(g, xs, out, axes, attrs, needs):
    n = math.prod(xs[0].shape[a] for a in axes)
    return [_expand(g, xs[0].shape, axes, attrs.get("keepdims", False)) / n]


@register("max")
def _max_fwd(xs, attrs):
    x = xs[0]
    axis = _axis("max", attrs.get("axis", -1), x.ndim)
    # argmax returns the first occurrence, so ties go to the lowest index
    arg = np.expand_dims(np.argmax(x, axis=axis), axis)
    out = np.take_along_axis(x, arg, axis=axis)
    if not attrs.get("keepdims", False):
        out = np.squeeze(out, axis)
    return out, (axis, arg)


@_max_fwd.backward
def _max_bwd(g, xs, out, ctx, attrs, needs):
    axis, arg = ctx
    if not attrs.get("keepdims", False):
        g = np.expand_dims(g, axis)
    gx = np.zeros_like(xs[0])
    np.put_along_axis(gx, arg, g, axis=axis)
    return [gx]


# ------------------------------------------------------------- normalisation


@register("softmax")
def _softmax_fwd(xs, attrs):
    x = xs[0]
    axis = _axis("softmax", attrs.get("axis", -1), x.ndim)
    tau = float(attrs.get("temperature", 1.0))
    if not tau > 0:
        raise _violation("softmax", f"temperature must be > 0, got {tau}")
    z = x / tau
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True), axis


@_softmax_fwd.backward
def _softmax_bwd(g, xs, y, axis, attrs, needs):
    tau = float(attrs.get("temperature", 1.0))
    return [y * (g - (g * y).sum(axis=axis, keepdims=True)) / tau]


def _safe_norm(x: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    n = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    return n, n != 0  # NaN norms must propagate, not read as zero


@register("l2_normalize")
def _l2n_fwd(xs, attrs):
    x = xs[0]
    axis = _axis("l2_normalize", attrs.get("axis", -1), x.ndim)
    n, ok = _safe_norm(x, axis)
    safe = np.where(ok, n, 1.0)
    return np.where(ok, x / safe, 0.0), (axis, safe, ok)


@_l2n_fwd.backward
def _l2n_bwd(g, xs, y, ctx, attrs, needs):
    axis, n, ok = ctx
    gx = (g - y * (g * y).sum(axis=axis, keepdims=True)) / n
    return [np.where(ok, gx, 0.0)]


@register("cosine_similarity", arity=2)
def _cos_fwd(xs, attrs):
    a, b = xs
    shape = _broadcast("cosine_similarity", a, b)
    axis = _axis("cosine_similarity", attrs.get("axis", -1), len(shape))
    a_, b_ = np.broadcast_to(a, shape), np.broadcast_to(b, shape)
    na, oka = _safe_norm(a_, axis)
    nb, okb = _safe_norm(b_, axis)
    ok = oka & okb
    na, nb = np.where(ok, na, 1.0), np.where(ok, nb, 1.0)
    dot = (a_ * b_).sum(axis=axis, keepdims=True)
    cos = np.where(ok, dot / (na * nb), 0.0)
    return np.squeeze(cos, axis), (axis, na, nb, ok, cos)


@_cos_fwd.backward
def _cos_bwd(g, xs, out, ctx, attrs, needs):
    axis, na, nb, ok, cos = ctx
    a, b = xs
    shape = np.broadcast_shapes(a.shape, b.shape)
    a_, b_ = np.broadcast_to(a, shape), np.broadcast_to(b, shape)
    g = np.expand_dims(g, axis) * ok
    ga = gb = None
    if needs[0]:
        ga = unbroadcast(g * (b_ / (na * nb) - cos * a_ / (na * na)), a.shape)
    if needs[1]:
        gb = unbroadcast(g * (a_ / (na * nb) - cos * b_ / (nb * nb)), b.shape)
    return [ga, gb]


# -------------------------------------------------------------------- losses


@register("bce_mean")
def _bce_fwd(xs, attrs):
    p = xs[0]
    y = np.asarray(attrs["target"], dtype=np.float64)
    if y.shape != p.shape:
        raise _violation("bce_mean", f"target shape {y.shape} != prediction shape {p.shape}")
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    loss = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    return np.asarray(loss.mean()), (y, pc)


@_bce_fwd.backward
def _bce_bwd(g, xs, out, ctx, attrs, needs):
    y, pc = ctx
    p = xs[0]
    inside = (p >= BCE_EPS) & (p <= 1.0 - BCE_EPS)
    d = (-y / pc + (1.0 - y) / (1.0 - pc)) / p.size
    return [g * d * inside]


@register("mse_mean", arity=2)
def _mse_fwd(xs, attrs):
    a, b = xs
    if a.shape != b.shape:
        raise _violation("mse_mean", f"shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    return np.asarray((d * d).mean()), d


@_mse_fwd.backward
def _mse_bwd(g, xs, out, d, attrs, needs):
    gd = 2.0 * g * d / d.size
    return [gd if needs[0] else None, -gd if needs[1] else None]


@register("cross_entropy")
def _ce_fwd(xs, attrs):
    logits = xs[0]
    labels = np.asarray(attrs["labels"], dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise _violation("cross_entropy", f"expected (B, V) logits and B labels, got {logits.shape} and {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise _violation("cross_entropy", "label outside [0, V)")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(len(labels)), labels].mean()
    return np.asarray(loss), (labels, np.exp(logp))


@_ce_fwd.backward
def _ce_bwd(g, xs, out, ctx, attrs, needs):
    labels, p = ctx
    d = p.copy()
    d[np.arange(len(labels)), labels] -= 1.0
    return [g * d / len(labels)]


# --------------------------------------------------------------- convolution


def conv_output_length(T: int, stride: int) -> int:
    return -(-T // stride)


def _conv_geometry(T: int, K: int, stride: int, dilation: int):
    pad_left = (K - 1) * dilation // 2
    T_out = conv_output_length(T, stride)
    last = (T_out - 1) * stride + (K - 1) * dilation - pad_left
    pad_right = max(0, last - (T - 1))
    idx = np.arange(T_out)[:, None] * stride + np.arange(K)[None, :] * dilation
    return pad_left, pad_right, idx


@register("conv1d_temporal", arity=2)
def _conv_fwd(xs, attrs):
    x, w = xs
    stride = int(attrs.get("stride", 1))
    dilation = int(attrs.get("dilation", 1))
    if x.ndim < 3 or w.ndim != 3:
        raise _violation("conv1d_temporal", f"expected x (B, T, ..., Cin) and w (K, Cin, Cout), got {x.shape} and {w.shape}")
    K, cin, cout = w.shape
    if attrs.get("window") is not None and int(attrs["window"]) != K:
        raise _violation("conv1d_temporal", f"window {attrs['window']} != kernel length {K}")
    if x.shape[-1] != cin:
        raise _violation("conv1d_temporal", f"input channels {x.shape[-1]} != kernel channels {cin}")
    if stride < 1 or dilation < 1:
        raise _violation("conv1d_temporal", "stride and dilation must be >= 1")
    B, T = x.shape[:2]
    mid = x.shape[2:-1]
    x4 = x.reshape(B, T, -1, cin)
    pl, pr, idx = _conv_geometry(T, K, stride, dilation)
    T_out = idx.shape[0]
    xp = np.pad(x4, ((0, 0), (pl, pr), (0, 0), (0, 0)))
    sb, st, sr, sc = xp.strides
    # zero-copy (B, T', R, K, Cin) window view, materialised once as im2col
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(B, T_out, xp.shape[2], K, cin), strides=(sb, stride * st, sr, dilation * st, sc), writeable=False
    )
    col = view.reshape(-1, K * cin)
    out = col @ w.reshape(K * cin, cout)
    return out.reshape(B, T_out, *mid, cout), (col, xp.shape, pl, stride, dilation)


@_conv_fwd.backward
def _conv_bwd(g, xs, out, ctx, attrs, needs):
    x, w = xs
    col, xp_shape, pl, stride, dilation = ctx
    K, cin, cout = w.shape
    g2 = g.reshape(-1, cout)
    gx = gw = None
    if needs[1]:
        gw = (col.T @ g2).reshape(K, cin, cout)
    if needs[0]:
        B, T_out = g.shape[:2]
        R = xp_shape[2]
        gxp = np.zeros(xp_shape)
        span = stride * (T_out - 1) + 1
        for k in range(K):
            gk = (g2 @ w[k].T).reshape(B, T_out, R, cin)
            gxp[:, k * dilation:k * dilation + span:stride] += gk
        T = x.shape[1]
        gx = gxp[:, pl:pl + T].reshape(x.shape)
    return [gx, gw]


def catalog() -> list[str]:
    return sorted(OPS)


def apply(op_kind: str, xs: Sequence[np.ndarray], attrs: dict) -> tuple[np.ndarray, Any]:
    from ..errors import UnsupportedOpError

    op = OPS.get(op_kind)
    if op is None:
        raise UnsupportedOpError(f"unknown op {op_kind!r}")
    if op.arity is not None and len(xs) != op.arity:
        raise _violation(op_kind, f"expected {op.arity} inputs, got {len(xs)}")
    return op.forward(list(xs), attrs)
