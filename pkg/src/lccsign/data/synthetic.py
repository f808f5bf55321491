"""Desk-scale synthetic sign data with known localisation windows.

Every clip is a fixed rest pose plus Gaussian noise; one class-specific
motion pattern is added inside a random window. A pattern moves each hand
and the mouth as a group along a smooth path and also deforms individual
nodes, so it is visible to node-shared graph features. Word vectors are built so
that classes sharing a concept group are near-parallel and classes in
different groups are orthogonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation
from .samples import KeypointSample
from .skeleton import CHANNELS, NODE_COUNTS
from .wordvec import WordEmbeddingTable

WITHIN_GROUP_COS = 0.92


@dataclass
class SyntheticSpec:
    num_classes: int = 10
    T: int = 64
    signal_window: tuple[int, int] = (16, 32)
    noise_scale: float = 0.5
    concept_groups: list[list[int]] | None = None
    seed: int = 0
    n_train: int = 400
    n_val: int = 100
    n_test: int = 100
    coord_dims: int = 3
    word_dim: int = 32
    pattern_scale: float = 1.0
    fps: float = 25.0

    def validate(self) -> None:
        lo, hi = self.signal_window
        if self.num_classes < 2:
            raise ContractViolation(f"num_classes must be >= 2, got {self.num_classes}")
        if not 1 <= lo <= hi <= self.T:
            raise ContractViolation(f"signal_window {self.signal_window} must satisfy 1 <= min <= max <= T={self.T}")
        if self.coord_dims not in (2, 3):
            raise ContractViolation(f"coord_dims must be 2 or 3, got {self.coord_dims}")
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise ContractViolation("split sizes must be non-negative")
        if self.concept_groups is not None:
            flat = sorted(c for grp in self.concept_groups for c in grp)
            if flat != list(range(self.num_classes)):
                raise ContractViolation("concept_groups must partition range(num_classes)")


def even_groups(num_classes: int, num_groups: int) -> list[list[int]]:
    """Split classes into ``num_groups`` runs of consecutive indices."""
    if not 1 <= num_groups <= num_classes:
        raise ContractViolation(f"need 1 <= groups <= classes, got {num_groups} for {num_classes}")
    bounds = np.linspace(0, num_classes, num_groups + 1).round().astype(int)
    return [list(range(bounds[i], bounds[i + 1])) for i in range(num_groups)]


@dataclass
class SyntheticDataset:
    glosses: list[str]
    train: list[KeypointSample]
    val: list[KeypointSample]
    test: list[KeypointSample]
    words: WordEmbeddingTable
    windows: dict[str, tuple[int, int]]
    groups: list[list[int]] = field(default_factory=list)

    @property
    def splits(self) -> dict[str, list[KeypointSample]]:
        return {"train": self.train, "val": self.val, "test": self.test}


def synthetic_word_vectors(groups: list[list[int]], num_classes: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    dim = max(dim, num_classes + len(groups))
    basis, _ = np.linalg.qr(rng.standard_normal((dim, len(groups) + num_classes)))
    shared = np.sqrt(WITHIN_GROUP_COS)
    own = np.sqrt(1.0 - WITHIN_GROUP_COS)
    vecs = np.zeros((num_classes, dim))
    for g, members in enumerate(groups):
        for c in members:
            vecs[c] = shared * basis[:, g] + own * basis[:, len(groups) + c]
    return vecs


def generate_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    V, T, D = spec.num_classes, spec.T, spec.coord_dims
    groups = spec.concept_groups or [[c] for c in range(V)]

    rest = {c: rng.normal(0.0, 0.5, size=(2, NODE_COUNTS[c])) for c in CHANNELS}
    patterns = []
    for _ in range(V):
        per_channel = {}
        for c in CHANNELS:
            n = NODE_COUNTS[c]
            # per-node shape change plus, off the torso, a whole-group trajectory
            offset = rng.normal(0.0, 0.5 * spec.pattern_scale, size=(2, n))
            amp = rng.normal(0.0, 0.5 * spec.pattern_scale, size=(2, n))
            phase = rng.uniform(0.0, 2 * np.pi, size=(2, n))
            if c != "body":
                offset += rng.normal(0.0, spec.pattern_scale, size=(2, 1))
                amp += rng.normal(0.0, spec.pattern_scale, size=(2, 1))
                phase = phase * 0.25 + rng.uniform(0.0, 2 * np.pi, size=(2, 1))
            per_channel[c] = (offset, amp, phase)
        patterns.append(per_channel)
    words = synthetic_word_vectors(groups, V, spec.word_dim, rng)
    glosses = [f"sign{j:02d}" for j in range(V)]

    windows: dict[str, tuple[int, int]] = {}
    splits = {}
    lo, hi = spec.signal_window
    for split, n in (("train", spec.n_train), ("val", spec.n_val), ("test", spec.n_test)):
        labels = rng.permutation(np.arange(n) % V)
        samples = []
        for i, label in enumerate(labels):
            sid = f"{split}_{i:04d}"
            length = int(rng.integers(lo, hi + 1))
            start = int(rng.integers(0, T - length + 1))
            u = (np.arange(length) + 0.5) / length
            chans = {}
            for c in CHANNELS:
                n_nodes = NODE_COUNTS[c]
                x = np.empty((T, D, n_nodes))
                x[:, :2] = rest[c][None] + rng.normal(0.0, spec.noise_scale, size=(T, 2, n_nodes))
                if D == 3:
                    x[:, 2] = 1.0
                offset, amp, phase = patterns[int(label)][c]
                wave = offset[None] + amp[None] * np.sin(2 * np.pi * u[:, None, None] + phase[None])
                x[start:start + length, :2] += wave
                chans[c] = x
            windows[sid] = (start, start + length)
            samples.append(KeypointSample(sid, int(label), chans, spec.fps))
        splits[split] = samples

    return SyntheticDataset(
        glosses=glosses,
        train=splits["train"],
        val=splits["val"],
        test=splits["test"],
        words=WordEmbeddingTable(glosses, words),
        windows=windows,
        groups=[list(g) for g in groups],
    )
