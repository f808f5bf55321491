"""LCC head: embedding table, similarity network, recognition head and losses.

Shapes (a leading batch axis ``B`` is optional everywhere):

* features ``z_hat``: ``(B, T', C)``
* embedding table ``E``: ``(C, V', M)``, slots ``[0, V)`` are the target
  vocabulary and ``[V, V')`` the extended background slots
* ``c_hat`` and ``q``: ``(B, T', V')``; ``q_hat``: ``(B, V)``
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .tensor import Graph, Tensor

log = logging.getLogger(__name__)

DENOM_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 5.0  # conceptual similarity
    beta: float = 10.0  # recognition
    tau: float = 0.1

    def __post_init__(self):
        if not self.tau > 0:
            raise ContractViolation(f"tau must be > 0, got {self.tau}")


@dataclass(frozen=True)
class DropMaskSpec:
    p_channel: float = 0.1
    p_temporal: float = 0.1
    enabled: bool = True

    def __post_init__(self):
        for name in ("p_channel", "p_temporal"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ContractViolation(f"{name} must lie in [0, 1), got {p}")


@dataclass
class LccEmbeddingTable:
    E: np.ndarray
    V: int

    def __post_init__(self):
        if self.E.ndim != 3:
            raise ContractViolation(f"embedding table must be C x V' x M, got {self.E.shape}")
        if not 0 < self.V < self.E.shape[1]:
            raise ContractViolation(f"need 0 < V < V', got V={self.V}, V'={self.E.shape[1]}")

    @property
    def C(self) -> int:
        return self.E.shape[0]

    @property
    def V_ext(self) -> int:
        return self.E.shape[1]

    @property
    def M(self) -> int:
        return self.E.shape[2]

    @classmethod
    def init(cls, C: int, V: int, extra: int, M: int, rng: np.random.Generator) -> "LccEmbeddingTable":
        E = rng.normal(0.0, 1.0 / np.sqrt(C), size=(C, V + extra, M))
        # nonzero norm is guaranteed in practice; redraw the measure-zero case
        while (np.linalg.norm(E, axis=0) == 0).any():
            E = rng.normal(0.0, 1.0 / np.sqrt(C), size=(C, V + extra, M))
        return cls(E, V)


@dataclass
class HeadOutputs:
    c_hat: Tensor
    q: Tensor
    q_hat: Tensor
    losses: dict[str, Tensor] = field(default_factory=dict)


def similarity_scores(g: Graph, z_hat: Tensor, E: Tensor) -> Tensor:
    """Mean plus max cosine similarity over the M variations of each slot."""
    C, V_ext, M = E.shape
    if z_hat.shape[-1] != C:
        raise ContractViolation(f"similarity_scores: feature dim {z_hat.shape[-1]} != embedding dim {C}")
    zn = g.l2_normalize(z_hat, axis=-1)
    en = g.reshape(g.l2_normalize(E, axis=0), (C, V_ext * M))
    cos = g.matmul(zn, en)
    cos = g.reshape(cos, (*z_hat.shape[:-1], V_ext, M))
    return g.add(g.mean(cos, axis=-1), g.max(cos, axis=-1))


def temporal_distribution(g: Graph, c_hat: Tensor, tau: float) -> Tensor:
    if not tau > 0:
        raise ContractViolation(f"tau must be > 0, got {tau}")
    return g.softmax(c_hat, axis=-1, temperature=tau)


def recognition_head(g: Graph, q: Tensor, V: int) -> Tensor:
    """Temporally summed in-vocabulary mass, normalised over the target classes."""
    V_ext = q.shape[-1]
    if not 0 < V < V_ext:
        raise ContractViolation(f"recognition_head: need 0 < V < V', got V={V}, V'={V_ext}")
    t_axis = q.values.ndim - 2
    num = g.sum(g.slice(q, 0, V, axis=-1), axis=t_axis)
    den = g.sum(num, axis=-1, keepdims=True)
    if (den.values < DENOM_FLOOR).any():
        log.warning("recognition_head: all probability mass on extended slots; denominator floored")
    return g.div(num, g.clamp(den, lo=DENOM_FLOOR))


def one_hot(labels, V: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((*labels.shape, V))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def recognition_loss(g: Graph, q_hat: Tensor, target: np.ndarray) -> Tensor:
    return g.bce_mean(q_hat, np.asarray(target, dtype=np.float64))


def cosine_matrix(vectors: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of rows, with an exact unit diagonal."""
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ContractViolation(f"concept_similarity_matrix: row {int(zero[0])} has zero norm")
    u = vectors / norms[:, None]
    s = u @ u.T
    np.fill_diagonal(s, 1.0)
    return s


def class_vectors(g: Graph, E: Tensor, V: int) -> Tensor:
    """Per-class embedding: mean over variations of the target slots, as (V, C)."""
    target = g.slice(E, 0, V, axis=1)
    return g.transpose(g.mean(target, axis=2), (1, 0))


def concept_similarity_matrix(g: Graph, vectors: Tensor) -> Tensor:
    norms = np.linalg.norm(vectors.values, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ContractViolation(f"concept_similarity_matrix: row {int(zero[0])} has zero norm")
    V = vectors.shape[0]
    u = g.l2_normalize(vectors, axis=1)
    s = g.matmul(u, g.transpose(u, (1, 0)))
    # self-similarity is identically 1; pin it so rounding never leaks in
    eye = np.eye(V)
    return g.add(g.mul(s, 1.0 - eye), eye)


def concept_loss(g: Graph, S_E: Tensor, S_F) -> Tensor:
    S_F = S_F if isinstance(S_F, Tensor) else np.asarray(S_F, dtype=np.float64)
    if tuple(S_E.shape) != tuple(np.shape(S_F.values if isinstance(S_F, Tensor) else S_F)):
        raise ContractViolation(f"concept_loss: shapes differ: {S_E.shape} vs {np.shape(S_F)}")
    return g.mse_mean(S_E, S_F)


def combined_loss(g: Graph, l_rec: Tensor, l_concept: Tensor | None, w: LossWeights) -> Tensor:
    total = g.scale(l_rec, w.beta)
    if l_concept is not None:
        total = g.add(g.scale(l_concept, w.alpha), total)
    return total


def sample_drop_mask(C: int, T: int, spec: DropMaskSpec, rng: np.random.Generator, batch: int | None = None):
    """Draw the zeroed channel set and zeroed time rows.

    Channels are shared by the whole batch because they must match the rows
    zeroed in ``E``; time rows are drawn per sample.
    """
    if not spec.enabled:
        return np.zeros(0, dtype=np.int64), None
    channels = np.flatnonzero(rng.random(C) < spec.p_channel)
    shape = (T,) if batch is None else (batch, T)
    time_hits = rng.random(shape) < spec.p_temporal
    return channels, time_hits


def drop_feature_mask(
    g: Graph, z_hat: Tensor, E: Tensor, spec: DropMaskSpec, rng: np.random.Generator
) -> tuple[Tensor, Tensor]:
    """Zero the same channel indices in ``z_hat`` and ``E`` plus random time rows of ``z_hat``."""
    if not spec.enabled or (spec.p_channel == 0 and spec.p_temporal == 0):
        return z_hat, E
    C = E.shape[0]
    batch = z_hat.shape[0] if z_hat.values.ndim == 3 else None
    T = z_hat.shape[-2]
    channels, time_hits = sample_drop_mask(C, T, spec, rng, batch)
    if channels.size:
        z_hat = g.mask_zero(z_hat, channels, axis=-1)
        E = g.mask_zero(E, channels, axis=0)
    if time_hits is not None and time_hits.any():
        keep = (~time_hits).astype(np.float64)[..., None]
        z_hat = g.mul(z_hat, keep)
    return z_hat, E


def lcc_head(
    g: Graph,
    z_hat: Tensor,
    E: Tensor,
    V: int,
    weights: LossWeights,
    labels=None,
    S_F: np.ndarray | None = None,
    mask: DropMaskSpec | None = None,
    rng: np.random.Generator | None = None,
) -> HeadOutputs:
    """Run one head end to end; losses are attached when ``labels`` are given."""
    z_used, E_used = z_hat, E
    if mask is not None and rng is not None:
        z_used, E_used = drop_feature_mask(g, z_hat, E, mask, rng)
    c_hat = similarity_scores(g, z_used, E_used)
    q = temporal_distribution(g, c_hat, weights.tau)
    q_hat = recognition_head(g, q, V)
    out = HeadOutputs(c_hat, q, q_hat)
    if labels is not None:
        l_rec = recognition_loss(g, q_hat, one_hot(labels, V))
        l_concept = None
        if S_F is not None and weights.alpha != 0:
            # concept alignment uses the unmasked table
            l_concept = concept_loss(g, concept_similarity_matrix(g, class_vectors(g, E, V)), S_F)
        out.losses = {"rec": l_rec, "total": combined_loss(g, l_rec, l_concept, weights)}
        if l_concept is not None:
            out.losses["concept"] = l_concept
    return out


@dataclass
class Localisation:
    background: np.ndarray  # (T',)
    per_class: np.ndarray  # (T', V)
    argmax: np.ndarray  # (T',)
    segments: list[tuple[int, int]]


def localise(q: np.ndarray, V: int, target: int | None = None) -> Localisation:
    """Background mass per step and maximal runs where ``target`` is the argmax."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 2 or not 0 < V < q.shape[1]:
        raise ContractViolation(f"localise: q must be T' x V' with V < V', got {q.shape} and V={V}")
    if target is not None and not 0 <= target < V:
        raise ContractViolation(f"localise: target {target} outside [0, {V})")
    background = q[:, V:].sum(axis=1)
    arg = np.argmax(q, axis=1)
    segments = []
    if target is not None:
        hit = arg == target
        t = 0
        while t < len(hit):
            if hit[t]:
                start = t
                while t < len(hit) and hit[t]:
                    t += 1
                segments.append((start, t))
            else:
                t += 1
    return Localisation(background, q[:, :V].copy(), arg, segments)


def segments_to_frames(segments, stride: int = 1, length: int | None = None, scale: float = 1.0) -> list[tuple[float, float]]:
    """Input-frame intervals covered by runs of output steps.

    With symmetric padding, output step ``t`` is centred on input frame
    ``t * stride`` and stands for ``[t*stride - (stride-1)/2, t*stride + (stride+1)/2)``.
    Intervals are clipped to ``[0, length)`` and then multiplied by ``scale``
    (e.g. original length over resampled length).
    """
    if stride < 1:
        raise ContractViolation(f"stride must be >= 1, got {stride}")
    shift = (stride - 1) / 2
    out = []
    for a, b in segments:
        lo, hi = max(a * stride - shift, 0.0), b * stride - shift
        if length is not None:
            hi = min(hi, float(length))
        out.append((lo * scale, hi * scale))
    return out


def temporal_iou(intervals, window: tuple[float, float]) -> float:
    """IoU between the union of disjoint ``intervals`` and one window; 0 when nothing is predicted."""
    lo, hi = window
    inter = sum(max(0.0, min(b, hi) - max(a, lo)) for a, b in intervals)
    pred_len = sum(b - a for a, b in intervals)
    union = pred_len + (hi - lo) - inter
    return float(inter / union) if union > 0 else 0.0
