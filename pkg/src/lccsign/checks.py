"""Gradient-check suites run by the ``gradcheck`` command and the test-suite.

Inputs are drawn away from kinks (relu at 0, clamp bounds, ties inside max,
the BCE probability clamp) so central differences with step 1e-3 measure the
derivative rather than a kink crossing. Op instances with near-zero gradient
entries are redrawn too, since a per-element relative error is meaningless
where the entry is no larger than the truncation error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .backbone import CHANNEL_BACKBONE, BackboneConfig, ModelConfig, SignModel, baseline_forward
from .data.skeleton import default_graphs
from .errors import ContractViolation
from .head import (
    LossWeights,
    class_vectors,
    concept_loss,
    concept_similarity_matrix,
    cosine_matrix,
    lcc_head,
    similarity_scores,
)
from .tensor import OPS, Graph, backward, catalog, check_gradients, grad_check
from .tensor.gradcheck import GRADCHECK_WEIGHT_SEED
from .tensor.ops import apply
from .tensor.gradcheck import numeric_gradient, relative_error

TOLERANCES = {"ops": 1e-4, "head": 1e-4, "end2end": 1e-3}
STEP = 1e-3


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.error <= self.tol)


def _away_from(rng, shape, points, gap=0.05, lo=-1.0, hi=1.0):
    x = rng.uniform(lo, hi, size=shape)
    for p in points:
        near = np.abs(x - p) < gap
        x[near] = p + np.where(x[near] >= p, gap, -gap) * 2
    return x


def _distinct(rng, shape, gap=0.1):
    n = int(np.prod(shape))
    return (rng.permutation(n) * gap + rng.uniform(0, gap / 4, size=n)).reshape(shape) - n * gap / 2


def _nonzero(rng, shape, lo=0.5, hi=1.5):
    return rng.uniform(lo, hi, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _op_builders():
    """``(case name, op, draw(rng) -> (inputs, attrs))`` for every registered op."""

    def n(shape, scale=1.0):
        return lambda rng: scale * rng.standard_normal(shape)

    def fixed(*parts, **attrs):
        return lambda rng: ([p(rng) for p in parts], dict(attrs))

    return [
        ("matmul 2d", "matmul", fixed(n((3, 4)), n((4, 5)))),
        ("matmul adjacency", "matmul", fixed(n((4, 4)), n((2, 3, 4, 2)))),
        ("matmul projection", "matmul", fixed(n((2, 3, 4, 2)), n((2, 3)))),
        ("add broadcast", "add", fixed(n((2, 3, 4)), n((4,)))),
        ("sub broadcast", "sub", fixed(n((3, 4)), n((3, 1)))),
        ("mul_elementwise", "mul_elementwise", fixed(n((2, 3)), n((2, 3)))),
        ("div broadcast", "div", fixed(n((2, 3)), lambda rng: _nonzero(rng, (3,)))),
        ("scale", "scale", fixed(n((2, 3)), factor=-1.7)),
        ("relu", "relu", fixed(lambda rng: _away_from(rng, (3, 4), [0.0]))),
        ("clamp", "clamp", fixed(lambda rng: _away_from(rng, (3, 4), [-0.5, 0.5]), lo=-0.5, hi=0.5)),
        ("mask_zero", "mask_zero", fixed(n((3, 4)), indices=[0, 2], axis=1)),
        ("concat", "concat", fixed(n((2, 3)), n((2, 2)), axis=1)),
        ("slice", "slice", fixed(n((4, 5)), start=1, stop=4, axis=1)),
        ("reshape", "reshape", fixed(n((2, 6)), shape=(3, 4))),
        ("transpose", "transpose", fixed(n((2, 3, 4)), axes=(2, 0, 1))),
        ("sum", "sum", fixed(n((2, 3, 4)), axis=1)),
        ("mean keepdims", "mean", fixed(n((2, 3, 4)), axis=(0, 2), keepdims=True)),
        ("max", "max", fixed(lambda rng: _distinct(rng, (3, 5)), axis=-1)),
        ("softmax tau 0.1", "softmax", fixed(lambda rng: 0.3 * rng.standard_normal((3, 6)), axis=-1, temperature=0.1)),
        ("softmax tau 1", "softmax", fixed(n((3, 6)), axis=0, temperature=1.0)),
        ("l2_normalize", "l2_normalize", fixed(n((3, 4), 3.0), axis=-1)),
        # unit-norm maps curve like 1/|x|^3; larger vectors keep differences near-linear
        ("cosine_similarity", "cosine_similarity", fixed(n((3, 5), 3.0), n((2, 1, 5), 3.0), axis=-1)),
        (
            "bce_mean",
            "bce_mean",
            lambda rng: ([rng.uniform(0.1, 0.9, (3, 4))], {"target": rng.integers(0, 2, (3, 4)).astype(float)}),
        ),
        ("mse_mean", "mse_mean", fixed(n((3, 4)), n((3, 4)))),
        ("cross_entropy", "cross_entropy", lambda rng: ([rng.standard_normal((4, 5))], {"labels": rng.integers(0, 5, 4)})),
        ("conv1d stride 2", "conv1d_temporal", fixed(n((2, 7, 3, 2)), n((3, 2, 4)), stride=2, dilation=1, window=3)),
        ("conv1d dilation 2", "conv1d_temporal", fixed(n((2, 6, 2)), n((3, 2, 3)), stride=1, dilation=2)),
    ]


# nonzero gradient entries smaller than this carry O(step^2) truncation error
# comparable to their own size, which no per-element relative test can pass
GRAD_FLOOR = 2e-3


def _conditioned(op: str, xs, attrs) -> bool:
    out, _ = apply(op, xs, attrs)
    weights = np.random.default_rng(GRADCHECK_WEIGHT_SEED).standard_normal(np.shape(out))
    g = Graph()
    ts = [g.leaf(x, requires_grad=True) for x in xs]
    grads = backward(g, g.sum(g.mul(g.forward(op, ts, **attrs), weights)))
    for t in ts:
        a = np.abs(grads.of(t))
        if ((a > 1e-12) & (a < GRAD_FLOOR)).any():
            return False
    return True


def op_cases(seed: int = 0, tries: int = 100) -> list[tuple[str, str, list[np.ndarray], dict]]:
    """``(case name, op, inputs, attrs)`` covering every registered op.

    Each case is redrawn until no gradient entry sits in the ill-conditioned
    band below ``GRAD_FLOOR``.
    """
    rng = np.random.default_rng(seed)
    cases = []
    for name, op, draw in _op_builders():
        for _ in range(tries):
            xs, attrs = draw(rng)
            if _conditioned(op, xs, attrs):
                break
        else:
            raise ContractViolation(f"no well-conditioned instance for {name} in {tries} draws")
        cases.append((name, op, xs, attrs))
    return cases


def ops_suite(step: float = STEP, seed: int = 0) -> list[CheckResult]:
    cases = op_cases(seed)
    covered = {op for _, op, _, _ in cases}
    missing = [op for op in catalog() if OPS[op].differentiable and op not in covered]
    if missing:
        raise ContractViolation(f"ops suite has no case for: {', '.join(missing)}")
    return [CheckResult(name, grad_check(op, xs, attrs, step), TOLERANCES["ops"]) for name, op, xs, attrs in cases]


def _head_instance(rng, B=2, T=4, C=6, V=4, extra=3, M=3, tau=0.1, tries=200):
    """Draw ``z_hat`` and ``E`` with clear max-over-M winners and unclamped ``q_hat``."""
    from .head import recognition_head, temporal_distribution
    from .tensor import Graph

    for _ in range(tries):
        z = rng.standard_normal((B, T, C))
        E = rng.standard_normal((C, V + extra, M))
        zn = z / np.linalg.norm(z, axis=-1, keepdims=True)
        en = E / np.linalg.norm(E, axis=0, keepdims=True)
        cos = np.sort(np.einsum("btc,cvm->btvm", zn, en), axis=-1)
        if (cos[..., -1] - cos[..., -2]).min() < 0.02:
            continue
        g = Graph(check_finite=False)
        q_hat = recognition_head(g, temporal_distribution(g, similarity_scores(g, g.leaf(z), g.leaf(E)), tau), V).values
        if q_hat.min() > 1e-4 and q_hat.max() < 1 - 1e-4:
            # cosines ignore scale; longer vectors keep finite differences in the near-linear regime
            return 10.0 * z, 10.0 * E
    raise ContractViolation("could not draw a kink-free head instance")


def head_suite(step: float = STEP, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    V, tol = 4, TOLERANCES["head"]
    w = LossWeights()
    z, E = _head_instance(rng, V=V, tau=w.tau)
    labels = np.array([1, 3])
    S_F = cosine_matrix(rng.standard_normal((V, 5)))
    proj = rng.standard_normal((2, 4, V + 3))

    def sim(g, z_t, E_t):
        return g.sum(g.mul(similarity_scores(g, z_t, E_t), proj))

    def rec(g, z_t, E_t):
        return lcc_head(g, z_t, E_t, V, w, labels).losses["rec"]

    def concept(g, E_t):
        return concept_loss(g, concept_similarity_matrix(g, class_vectors(g, E_t, V)), S_F)

    def total(g, z_t, E_t):
        return lcc_head(g, z_t, E_t, V, w, labels, S_F).losses["total"]

    W, b = rng.standard_normal((6, V)), rng.standard_normal(V)

    def ce(g, z_t, W_t, b_t):
        return g.cross_entropy(baseline_forward(g, z_t, W_t, b_t), labels)

    return [
        CheckResult("similarity mean+max", check_gradients(sim, [z, E], step), tol),
        CheckResult("softmax, recognition head, BCE", check_gradients(rec, [z, E], step), tol),
        CheckResult("concept similarity path", check_gradients(concept, [E], step), tol),
        CheckResult("combined LCC loss", check_gradients(total, [z, E], step), tol),
        CheckResult("pooled linear + cross entropy", check_gradients(ce, [z, W, b], step), tol),
    ]


TINY_BACKBONE = BackboneConfig(channels=(2,), strides=(2,), window=3)


def _kink_margin_ok(model: SignModel, batch, step: float) -> bool:
    """Every first-block relu input must clear the largest shift one perturbed parameter can cause."""
    bb = model.cfg.backbone
    if len(bb.channels) != 1:
        raise ContractViolation("kink screening supports single-block backbones only")
    for c, x in batch.items():
        prefix = f"backbone.{CHANNEL_BACKBONE[c]}.block0"
        ax = model.graphs[c].normalized_adjacency @ x
        pre = ax @ model.params[f"{prefix}.gc.W"] + model.params[f"{prefix}.gc.b"]
        margin = 2.0 * step * np.maximum(1.0, np.abs(ax).max(axis=-1, keepdims=True))
        if (np.abs(pre) < margin).any():
            return False
    return True


def _head_margin_ok(model: SignModel, batch, w: LossWeights, step: float, gap: float = 0.05) -> bool:
    """Clear max-over-M winners, unclamped ``q_hat`` and vectors long enough that a step barely rotates them."""
    from .tensor import Graph

    g = Graph(check_finite=False)
    out = model.forward(g, model.bind(g, requires_grad=False), batch, w)
    feats = model.encode(g, model.bind(g, requires_grad=False), batch)
    for name, h in out.heads.items():
        z = feats[name].values
        E = model.params[f"head.{name}.E"]
        if min(np.linalg.norm(z, axis=-1).min(), np.linalg.norm(E, axis=0).min()) < 50 * step:
            return False
        zn = z / np.linalg.norm(z, axis=-1, keepdims=True)
        en = E / np.linalg.norm(E, axis=0, keepdims=True)
        cos = np.sort(np.einsum("btc,cvm->btvm", zn, en), axis=-1)
        if (cos[..., -1] - cos[..., -2]).min() < gap:
            return False
        q_hat = h.q_hat.values
        if q_hat.min() < 1e-4 or q_hat.max() > 1 - 1e-4:
            return False
    return True


def end2end_suite(step: float = STEP, seed: int = 0, loss: str = "lcc", tries: int = 2000) -> list[CheckResult]:
    """Full model gradient with respect to every parameter on a tiny backbone."""
    from .tensor import Graph

    rng = np.random.default_rng(seed)
    V = 3
    w = LossWeights(tau=0.5)
    cfg = ModelConfig(V, TINY_BACKBONE, extra_slots=2, variations=2, loss=loss)
    for attempt in range(tries):
        model = SignModel(cfg, default_graphs(), seed=int(rng.integers(2**31)))
        # cosine scores ignore the scale of E, so longer columns leave the loss unchanged
        for k in model.params:
            if k.endswith(".E"):
                model.params[k] *= 10.0
        # large inputs give long feature vectors, where normalisation curvature is small
        batch = {c: 10.0 * rng.standard_normal((1, 4, gr.node_count, 3)) for c, gr in model.graphs.items()}
        if _kink_margin_ok(model, batch, step) and (loss != "lcc" or _head_margin_ok(model, batch, w, step)):
            break
    else:
        raise ContractViolation("could not draw a kink-free end-to-end instance")
    labels = np.array([2])
    S_F = cosine_matrix(rng.standard_normal((V, 4)))
    names = sorted(model.params)

    def build(arrays):
        g = Graph(seed=seed)
        P = {k: g.leaf(a, requires_grad=True, name=k) for k, a in zip(names, arrays)}
        return g, P, model.forward(g, P, batch, w, labels, S_F).loss

    g, P, L = build([model.params[k] for k in names])
    grads = backward(g, L)
    analytic = [grads.of(P[k]) for k in names]
    numeric = numeric_gradient(lambda xs: build(xs)[2].item(), [model.params[k] for k in names], step)
    err = max(relative_error(a, n) for a, n in zip(analytic, numeric))
    return [CheckResult(f"end-to-end {loss} model", err, TOLERANCES["end2end"])]


SUITES: dict[str, Callable[..., list[CheckResult]]] = {"ops": ops_suite, "head": head_suite, "end2end": end2end_suite}


def run_suite(scope: str, step: float = STEP, seed: int = 0) -> list[CheckResult]:
    if scope not in SUITES:
        raise ContractViolation(f"unknown gradcheck scope {scope!r}; choose from {', '.join(SUITES)}")
    return SUITES[scope](step=step, seed=seed)
