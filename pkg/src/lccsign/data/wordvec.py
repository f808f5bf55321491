"""Plain-text word vectors (``count dim`` header, then ``token v1 ... vdim`` rows)."""

from __future__ import annotations

import logging
import re
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import DataError

log = logging.getLogger(__name__)


@dataclass
class WordEmbeddingTable:
    vocab: list[str]
    vectors: np.ndarray  # (V, dim)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __post_init__(self):
        if len(set(self.vocab)) != len(self.vocab):
            raise DataError("word embedding vocab has duplicate entries")
        norms = np.linalg.norm(self.vectors, axis=1)
        zero = [self.vocab[i] for i in np.flatnonzero(norms == 0)]
        if zero:
            raise DataError(f"zero-norm word vector(s): {', '.join(zero)}")


def read_word_vectors(path: str | Path) -> tuple[dict[str, np.ndarray], int]:
    """Parse the whole file into ``token -> vector``."""
    words: dict[str, np.ndarray] = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read word vectors {path}: {exc}") from exc
    with fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DataError(f"{path}:1: expected header 'count dim'")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise DataError(f"{path}:1: header values must be integers") from None
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").rstrip().split(" ")
            if parts == [""]:
                continue
            if len(parts) != dim + 1:
                raise DataError(f"{path}:{lineno}: expected token and {dim} values, got {len(parts) - 1} values")
            try:
                vec = np.array([float(v) for v in parts[1:]])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value") from None
            words.setdefault(parts[0], vec)
    if len(words) != count:
        log.warning("%s: header says %d rows, read %d", path, count, len(words))
    return words, dim


def _random_unit(dim: int, seed: int, gloss: str) -> np.ndarray:
    rng = np.random.default_rng([seed, zlib.crc32(gloss.encode("utf-8"))])
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _lookup(words: dict[str, np.ndarray], gloss: str) -> np.ndarray | None:
    for key in (gloss, gloss.lower(), gloss.replace(" ", "_")):
        if key in words:
            return words[key]
    parts = [p for p in re.split(r"[\s_]+", gloss) if p]
    if len(parts) > 1:
        vecs = [_lookup(words, p) for p in parts]
        if all(v is not None for v in vecs):
            return np.mean(vecs, axis=0)
    return None


def load_word_embeddings(
    path: str | Path, vocab: Sequence[str], allow_missing: bool = False, seed: int = 0
) -> WordEmbeddingTable:
    """Vectors reordered to ``vocab``; multi-word glosses fall back to the mean of their words."""
    words, dim = read_word_vectors(path)
    rows, missing = [], []
    for gloss in vocab:
        v = _lookup(words, gloss)
        if v is None:
            missing.append(gloss)
            v = _random_unit(dim, seed, gloss)
        rows.append(v)
    if missing and not allow_missing:
        raise DataError(f"{path}: no vectors for gloss(es): {', '.join(missing)}")
    if missing:
        log.warning("using random vectors for %d missing gloss(es): %s", len(missing), ", ".join(missing))
    return WordEmbeddingTable(list(vocab), np.array(rows, dtype=np.float64).reshape(len(vocab), dim))


def save_word_vectors(path: str | Path, table: WordEmbeddingTable) -> None:
    lines = [f"{len(table.vocab)} {table.dim}"]
    for word, vec in zip(table.vocab, table.vectors):
        lines.append(" ".join([word.replace(" ", "_")] + [repr(float(v)) for v in vec]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
