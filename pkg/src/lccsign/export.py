"""Plot-ready file outputs: CSV tables and PPM heatmaps."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractViolation


def fmt(v) -> str:
    """Floats with 9 significant digits; everything else via ``str``."""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".9g")
    return str(v)


def write_csv(path: str | Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_matrix_csv(path: str | Path, matrix: np.ndarray, labels: Sequence[str]) -> None:
    """Square matrix with a label column and header row."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (len(labels), len(labels)):
        raise ContractViolation(f"matrix shape {matrix.shape} does not match {len(labels)} labels")
    write_csv(path, ["gloss", *labels], [[lab, *row] for lab, row in zip(labels, matrix)])


def read_matrix_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    labels = rows[0][1:]
    return labels, np.array([[float(v) for v in r[1:]] for r in rows[1:]])


# 0 maps to black and 1 to white through dark red, orange and yellow;
# every channel is non-decreasing so brightness is monotone in the value
_STOPS = np.array([0.0, 0.35, 0.7, 1.0])
_COLORS = np.array([[0, 0, 0], [170, 20, 0], [255, 170, 0], [255, 255, 255]], dtype=np.float64)


def colormap(values: np.ndarray) -> np.ndarray:
    v = np.clip(np.nan_to_num(np.asarray(values, dtype=np.float64)), 0.0, 1.0)
    rgb = np.stack([np.interp(v, _STOPS, _COLORS[:, c]) for c in range(3)], axis=-1)
    return np.rint(rgb).astype(np.uint8)


@dataclass
class HeatmapExport:
    values: np.ndarray  # (rows, cols) grid, nominally in [0, 1]
    row_labels: list[str]
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != len(self.row_labels):
            raise ContractViolation(f"heatmap grid {self.values.shape} needs one label per row")
        if not self.hi > self.lo:
            raise ContractViolation("heatmap range needs hi > lo")

    def raster(self, cell: int = 8) -> np.ndarray:
        """RGB image, each grid cell drawn as a ``cell x cell`` block."""
        scaled = (self.values - self.lo) / (self.hi - self.lo)
        img = colormap(scaled)
        return np.repeat(np.repeat(img, cell, axis=0), cell, axis=1)


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ContractViolation(f"PPM needs an (H, W, 3) image, got {image.shape}")
    h, w, _ = image.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + image.tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, dims, maxval, rest = data.split(b"\n", 3)
    if magic != b"P6" or maxval != b"255":
        raise ContractViolation(f"{path}: not a binary 8-bit PPM")
    w, h = (int(v) for v in dims.split())
    return np.frombuffer(rest, dtype=np.uint8).reshape(h, w, 3)


def side_by_side(images: Sequence[np.ndarray], gap: int = 4) -> np.ndarray:
    h = max(im.shape[0] for im in images)
    parts = []
    for i, im in enumerate(images):
        pad = np.zeros((h, im.shape[1], 3), dtype=np.uint8)
        pad[: im.shape[0]] = im
        parts.append(pad)
        if i < len(images) - 1:
            parts.append(np.full((h, gap, 3), 255, dtype=np.uint8))
    return np.concatenate(parts, axis=1)
