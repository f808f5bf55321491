"""Optimisation loop, learning-rate schedules, metrics and stream ensembling."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .backbone import SignModel, predict_from_scores
from .data.samples import AugmentParams, KeypointSample, StreamKind, augment, center_on_root, derive_stream, resample_length
from .data.wordvec import WordEmbeddingTable
from .errors import ContractViolation, NumericalError
from .head import (
    DropMaskSpec,
    Localisation,
    LossWeights,
    class_vectors,
    concept_similarity_matrix,
    cosine_matrix,
    localise,
    segments_to_frames,
)
from .tensor import Graph, backward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 100
    base_lr: float = 0.0012
    weight_decay: float = 1e-4
    schedule: str = "warmup_cosine"  # or "multistep"
    warmup_epochs: int = 10
    milestones: tuple[int, ...] = (10, 20)
    lr_factor: float = 0.1
    seed: int = 0
    sequence_length: int = 64
    weights: LossWeights = field(default_factory=LossWeights)
    drop_mask: DropMaskSpec = field(default_factory=DropMaskSpec)
    stream: str = "joint"
    augment: bool = True
    augment_params: AugmentParams = field(default_factory=AugmentParams)
    center: bool = True
    checkpoint_policy: str = "best_val_top1"

    def __post_init__(self):
        if self.schedule not in ("warmup_cosine", "multistep"):
            raise ContractViolation(f"unknown schedule {self.schedule!r}")
        if self.batch_size < 1 or self.epochs < 1 or self.sequence_length < 1:
            raise ContractViolation("batch_size, epochs and sequence_length must be >= 1")
        StreamKind.parse(self.stream)

    @classmethod
    def isolated(cls, **kw) -> "TrainConfig":
        return cls(**kw)

    @classmethod
    def continuous(cls, **kw) -> "TrainConfig":
        base = dict(schedule="multistep", epochs=25, milestones=(10, 20), lr_factor=0.1, sequence_length=16)
        base.update(kw)
        return cls(**base)


def lr_at(cfg: TrainConfig, epoch: float) -> float:
    """Learning rate at a (possibly fractional) epoch."""
    if cfg.schedule == "multistep":
        return cfg.base_lr * cfg.lr_factor ** sum(1 for m in cfg.milestones if m <= epoch)
    if epoch < cfg.warmup_epochs:
        return cfg.base_lr * epoch / cfg.warmup_epochs
    span = max(cfg.epochs - cfg.warmup_epochs, 1)
    progress = min((epoch - cfg.warmup_epochs) / span, 1.0)
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8


def adam_step(
    params: dict[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    weight_decay: float = 0.0,
    decays: Callable[[str], bool] = lambda name: True,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """Adam with bias correction and decoupled weight decay, updating ``params`` in place."""
    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ContractViolation(f"adam_step: gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay and decays(name):
            p -= lr * weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ------------------------------------------------------------------ metrics


@dataclass
class Metrics:
    instance: dict[int, float]
    per_class: dict[int, float]
    class_counts: dict[int, int]

    @property
    def top1_instance(self) -> float:
        return self.instance[1]

    @property
    def top5_instance(self) -> float:
        return self.instance[5]

    @property
    def top1_class(self) -> float:
        return self.per_class[1]

    @property
    def top5_class(self) -> float:
        return self.per_class[5]

    def row(self) -> dict[str, float]:
        out = {}
        for k in sorted(self.instance):
            out[f"top{k}_instance"] = self.instance[k]
        for k in sorted(self.per_class):
            out[f"top{k}_class"] = self.per_class[k]
        return out


def evaluate(scores: np.ndarray, labels: Sequence[int], k_list: Sequence[int] = (1, 5)) -> Metrics:
    """Per-instance and per-class top-k accuracy from ``(n, V)`` scores."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or len(labels) == 0 or len(labels) != len(scores):
        raise ContractViolation(f"evaluate: need a non-empty (n, V) score matrix and n labels, got {scores.shape}")
    # stable sort on negated scores: ties rank the lower class index first
    order = np.argsort(-scores, axis=1, kind="stable")
    rank = np.argmax(order == labels[:, None], axis=1)
    classes, counts = np.unique(labels, return_counts=True)
    instance, per_class = {}, {}
    for k in k_list:
        hit = rank < k
        instance[k] = float(hit.mean())
        per_class[k] = float(np.mean([hit[labels == c].mean() for c in classes]))
    return Metrics(instance, per_class, {int(c): int(n) for c, n in zip(classes, counts)})


def ensemble_streams(q_hats: Sequence[np.ndarray], weights: Sequence[float] | None = None) -> np.ndarray:
    """Weighted mean of per-stream score vectors (uniform by default)."""
    if not q_hats:
        raise ContractViolation("ensemble_streams: no streams given")
    arrs = [np.asarray(q, dtype=np.float64) for q in q_hats]
    if len({a.shape for a in arrs}) != 1:
        raise ContractViolation(f"ensemble_streams: shapes differ: {[a.shape for a in arrs]}")
    w = np.ones(len(arrs)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (len(arrs),) or w.sum() <= 0:
        raise ContractViolation("ensemble_streams: need one positive weight per stream")
    return sum(wi * a for wi, a in zip(w, arrs)) / w.sum()


# ------------------------------------------------------------ batch assembly


def preprocess(sample: KeypointSample, cfg: TrainConfig) -> KeypointSample:
    sample = resample_length(sample, cfg.sequence_length)
    return center_on_root(sample) if cfg.center else sample


def to_batch(samples: Sequence[KeypointSample]) -> dict[str, np.ndarray]:
    """Stack ``T x D x N`` channels into ``(B, T, N, D)`` model inputs."""
    return {c: np.stack([s.channels[c].transpose(0, 2, 1) for s in samples]) for c in samples[0].channels}


def assemble(samples, cfg: TrainConfig, graphs, rng: np.random.Generator | None = None) -> dict[str, np.ndarray]:
    out = []
    for s in samples:
        if rng is not None and cfg.augment:
            s = augment(s, cfg.augment_params, rng)
        out.append(derive_stream(s, cfg.stream, graphs))
    return to_batch(out)


def score_samples(model: SignModel, samples: Sequence[KeypointSample], cfg: TrainConfig, chunk: int = 64) -> np.ndarray:
    """Global-head ``q_hat`` for every sample (no augmentation or masking)."""
    prepared = [preprocess(s, cfg) for s in samples]
    out = []
    for i in range(0, len(prepared), chunk):
        batch = assemble(prepared[i:i + chunk], cfg, model.graphs)
        out.append(model.scores(batch, cfg.weights))
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.cfg.num_classes))


@dataclass
class SampleLocalisation:
    q: np.ndarray  # (T', V') per-step distribution of the global head
    predicted: int
    target: int
    result: Localisation
    frames: list[tuple[float, float]]  # target segments in the sample's own frame units


def localise_sample(model: SignModel, sample: KeypointSample, cfg: TrainConfig, target: int | None = None) -> SampleLocalisation:
    """Localise ``target`` (default: the predicted class) in one sample."""
    batch = assemble([preprocess(sample, cfg)], cfg, model.graphs)
    head = model.infer(batch, cfg.weights)
    q = np.array(head.q.values[0])
    pred = int(predict_from_scores(head.q_hat.values)[0])
    target = pred if target is None else int(target)
    loc = localise(q, model.cfg.num_classes, target)
    stride = model.cfg.backbone.temporal_stride
    frames = segments_to_frames(loc.segments, stride, cfg.sequence_length, sample.T / cfg.sequence_length)
    return SampleLocalisation(q, pred, target, loc, frames)


def concept_mse(model: SignModel, S_F: np.ndarray, head: str = "global") -> float:
    g = Graph(check_finite=False)
    E = g.leaf(model.params[f"head.{head}.E"])
    S_E = concept_similarity_matrix(g, class_vectors(g, E, model.cfg.num_classes)).values
    return float(np.mean((S_E - S_F) ** 2))


def embedding_similarity(model: SignModel, head: str = "global") -> np.ndarray:
    g = Graph(check_finite=False)
    E = g.leaf(model.params[f"head.{head}.E"])
    return np.array(concept_similarity_matrix(g, class_vectors(g, E, model.cfg.num_classes)).values)


# --------------------------------------------------------------------- fit


@dataclass
class FitResult:
    model: SignModel
    log: list[dict]
    best_epoch: int
    best_val_top1: float
    final_params: dict[str, np.ndarray]


def fit(
    train: Sequence[KeypointSample],
    val: Sequence[KeypointSample],
    model: SignModel,
    cfg: TrainConfig,
    words: WordEmbeddingTable | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> FitResult:
    """Minibatch Adam training; keeps the parameters with the best val top-1."""
    if not train or not val:
        raise ContractViolation("fit: train and val splits must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    S_F = None
    if model.cfg.loss == "lcc" and words is not None and cfg.weights.alpha != 0:
        S_F = cosine_matrix(words.vectors)

    train_p = [preprocess(s, cfg) for s in train]
    labels = np.array([s.label for s in train_p])
    val_labels = [s.label for s in val]
    state = OptimizerState()
    steps = math.ceil(len(train_p) / cfg.batch_size)

    best = (-1.0, -1, None)
    history = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(train_p))
        sums: dict[str, float] = {}
        for i in range(steps):
            idx = perm[i * cfg.batch_size:(i + 1) * cfg.batch_size]
            batch = assemble([train_p[j] for j in idx], cfg, model.graphs, rng)
            lr = lr_at(cfg, epoch + i / steps)

            g = Graph(seed=None)
            P = model.bind(g)
            out = model.forward(g, P, batch, cfg.weights, labels[idx], S_F, cfg.drop_mask, rng)
            loss = out.loss.item()
            if not math.isfinite(loss):
                where = g.describe(g.first_nonfinite) if g.first_nonfinite is not None else "unknown op"
                raise NumericalError(f"non-finite loss at epoch {epoch}, step {i}; first non-finite value from {where}")
            grads = backward(g, out.loss)
            named = {k: grads.of(t) for k, t in P.items()}
            adam_step(model.params, named, state, lr, cfg.weight_decay, model.decays)

            w = len(idx)
            sums["total"] = sums.get("total", 0.0) + w * loss
            for name, h in out.heads.items():
                for part in ("rec", "concept"):
                    if part in h.losses:
                        key = f"{part}.{name}"
                        sums[key] = sums.get(key, 0.0) + w * h.losses[part].item()

        metrics = evaluate(score_samples(model, val, cfg), val_labels, (1, 5))
        n = len(train_p)
        record = {
            "epoch": epoch,
            "lr": lr_at(cfg, epoch),
            "loss_total": sums["total"] / n,
        }
        for part in ("rec", "concept"):
            for name in model.cfg.heads:
                if f"{part}.{name}" in sums:
                    record[f"loss_{part}.{name}"] = sums[f"{part}.{name}"] / n
        record["val_top1"] = metrics.top1_instance
        record["val_top5"] = metrics.top5_instance
        history.append(record)
        log.info("epoch %d loss %.4f val top1 %.4f", epoch, record["loss_total"], record["val_top1"])
        if on_epoch is not None:
            on_epoch(record)
        if metrics.top1_instance > best[0]:
            best = (metrics.top1_instance, epoch, copy.deepcopy(model.params))

    final = copy.deepcopy(model.params)
    model.params = best[2]
    return FitResult(model, history, best[1], best[0], final)
