"""Keypoint samples: on-disk format, stream derivation and augmentation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..errors import DataError
from .skeleton import CHANNELS, NODE_COUNTS, SHOULDERS, SkeletonGraph

DATASET_FORMAT = "lccsign-dataset"
MANIFEST = "manifest.json"


class StreamKind(str, Enum):
    JOINT = "joint"
    BONE = "bone"
    JOINT_MOTION = "joint_motion"
    BONE_MOTION = "bone_motion"

    @classmethod
    def parse(cls, value: "str | StreamKind") -> "StreamKind":
        try:
            return cls(value)
        except ValueError:
            raise DataError(f"unknown stream {value!r}; expected one of {[k.value for k in cls]}") from None


@dataclass
class KeypointSample:
    """One clip: per-channel ``T x D x N`` arrays plus an optional label."""

    sample_id: str
    label: int | None
    channels: dict[str, np.ndarray]
    fps: float = 25.0

    @property
    def T(self) -> int:
        return next(iter(self.channels.values())).shape[0]

    @property
    def D(self) -> int:
        return next(iter(self.channels.values())).shape[1]

    def replace(self, channels: Mapping[str, np.ndarray]) -> "KeypointSample":
        return KeypointSample(self.sample_id, self.label, dict(channels), self.fps)

    def to_json(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "fps": self.fps,
            "label": self.label,
            "channels": {c: np.round(self.channels[c], 6).tolist() for c in CHANNELS},
        }


def validate_sample(sample: KeypointSample, num_classes: int | None = None) -> KeypointSample:
    sid = sample.sample_id
    missing = [c for c in CHANNELS if c not in sample.channels]
    if missing:
        raise DataError(f"sample {sid}: missing channel(s) {', '.join(missing)}")
    T = D = None
    for c in CHANNELS:
        arr = sample.channels[c]
        if arr.ndim != 3:
            raise DataError(f"sample {sid}: {c} must be T x D x N, got shape {arr.shape}")
        if arr.shape[2] != NODE_COUNTS[c]:
            raise DataError(f"sample {sid}: {c} expects {NODE_COUNTS[c]} nodes, got {arr.shape[2]}")
        if not np.isfinite(arr).all():
            raise DataError(f"sample {sid}: {c} contains non-finite values")
        if T is None:
            T, D = arr.shape[:2]
        elif arr.shape[:2] != (T, D):
            raise DataError(f"sample {sid}: {c} has T x D {arr.shape[:2]}, expected {(T, D)}")
    if T == 0:
        raise DataError(f"sample {sid}: empty sequence")
    if sample.label is not None and num_classes is not None and not 0 <= sample.label < num_classes:
        raise DataError(f"sample {sid}: label {sample.label} outside [0, {num_classes})")
    return sample


def sample_from_json(doc: Mapping, num_classes: int | None = None, source: str = "") -> KeypointSample:
    sid = str(doc.get("sample_id", source))
    chans = doc.get("channels")
    if not isinstance(chans, Mapping):
        raise DataError(f"sample {sid}: 'channels' object missing")
    arrays = {}
    for c, v in chans.items():
        try:
            arrays[c] = np.asarray(v, dtype=np.float64)
        except (TypeError, ValueError):
            raise DataError(f"sample {sid}: {c} contains non-numeric or ragged values") from None
    label = doc.get("label")
    if label is not None and (isinstance(label, bool) or not isinstance(label, int)):
        raise DataError(f"sample {sid}: label must be an integer, got {label!r}")
    return validate_sample(KeypointSample(sid, label, arrays, float(doc.get("fps", 25.0))), num_classes)


@dataclass
class Manifest:
    root: Path
    glosses: list[str]
    splits: dict[str, list[str]]
    windows: dict[str, tuple[int, int]] = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.glosses)


def load_manifest(path: str | Path) -> Manifest:
    root = Path(path)
    mpath = root / MANIFEST if root.is_dir() else root
    root = mpath.parent
    try:
        doc = json.loads(mpath.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read manifest {mpath}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{mpath}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    glosses = doc.get("glosses")
    if not isinstance(glosses, list) or not glosses:
        raise DataError(f"{mpath}: 'glosses' must be a non-empty list")
    if len(set(glosses)) != len(glosses):
        raise DataError(f"{mpath}: duplicate glosses")
    windows = {}
    if doc.get("windows"):
        try:
            raw = json.loads((root / doc["windows"]).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read windows file {doc['windows']}: {exc}") from exc
        windows = {k: (int(v[0]), int(v[1])) for k, v in raw.items()}
    return Manifest(root, [str(g) for g in glosses], {k: list(v) for k, v in doc.get("splits", {}).items()}, windows)


def load_dataset(path: str | Path, split: str) -> list[KeypointSample]:
    manifest = load_manifest(path)
    return load_split(manifest, split)


def load_split(manifest: Manifest, split: str) -> list[KeypointSample]:
    if split not in manifest.splits:
        raise DataError(f"split {split!r} not in manifest (have {sorted(manifest.splits)})")
    out = []
    for rel in manifest.splits[split]:
        fpath = manifest.root / rel
        try:
            doc = json.loads(fpath.read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(f"sample {rel}: cannot read file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"sample {rel}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        out.append(sample_from_json(doc, manifest.num_classes, source=rel))
    return out


def save_dataset(
    root: str | Path,
    glosses: Sequence[str],
    splits: Mapping[str, Sequence[KeypointSample]],
    windows: Mapping[str, tuple[int, int]] | None = None,
) -> Path:
    root = Path(root)
    (root / "samples").mkdir(parents=True, exist_ok=True)
    manifest = {"format": DATASET_FORMAT, "version": 1, "glosses": list(glosses), "splits": {}}
    for split, samples in splits.items():
        names = []
        for s in samples:
            rel = f"samples/{s.sample_id}.json"
            (root / rel).write_text(json.dumps(s.to_json(), separators=(",", ":")) + "\n", encoding="utf-8")
            names.append(rel)
        manifest["splits"][split] = names
    if windows is not None:
        (root / "windows.json").write_text(
            json.dumps({k: list(v) for k, v in sorted(windows.items())}, indent=1) + "\n", encoding="utf-8"
        )
        manifest["windows"] = "windows.json"
    (root / MANIFEST).write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return root


# ------------------------------------------------------------------ streams


def bone(x: np.ndarray, graph: SkeletonGraph) -> np.ndarray:
    """``x[n] - x[parent(n)]`` along the node axis; roots become zero."""
    out = np.zeros_like(x)
    for child, parent in graph.bone_parent.items():
        out[..., child] = x[..., child] - x[..., parent]
    return out


def motion(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    out[:-1] = x[1:] - x[:-1]
    return out


def derive_stream(sample: KeypointSample, kind: StreamKind | str, graphs: Mapping[str, SkeletonGraph]) -> KeypointSample:
    kind = StreamKind.parse(kind)
    if kind is StreamKind.JOINT:
        return sample
    chans = {}
    for c, x in sample.channels.items():
        if kind in (StreamKind.BONE, StreamKind.BONE_MOTION):
            x = bone(x, graphs[c])
        if kind in (StreamKind.JOINT_MOTION, StreamKind.BONE_MOTION):
            x = motion(x)
        chans[c] = x
    return sample.replace(chans)


# ------------------------------------------------------------ preprocessing


def resample_indices(T: int, T_target: int) -> np.ndarray:
    # np.rint rounds half to even: T=2 -> 4 gives 0, 0, 1, 1
    idx = np.rint(np.arange(T_target) * T / T_target).astype(np.int64)
    return np.clip(idx, 0, T - 1)


def resample_length(sample: KeypointSample, T_target: int) -> KeypointSample:
    if T_target < 1:
        raise DataError(f"target length must be >= 1, got {T_target}")
    if T_target == sample.T:
        return sample
    idx = resample_indices(sample.T, T_target)
    return sample.replace({c: x[idx] for c, x in sample.channels.items()})


def center_on_root(sample: KeypointSample) -> KeypointSample:
    """Subtract the per-frame shoulder midpoint from the spatial coordinates."""
    body = sample.channels["body"]
    root = body[:, :2, list(SHOULDERS)].mean(axis=2, keepdims=True)  # (T, 2, 1)
    chans = {}
    for c, x in sample.channels.items():
        x = x.copy()
        x[:, :2] -= root
        chans[c] = x
    return sample.replace(chans)


@dataclass(frozen=True)
class AugmentParams:
    """Sampling ranges; rotation in degrees, applied in the first two coordinates."""

    rotation: tuple[float, float] = (-15.0, 15.0)
    scale: tuple[float, float] = (0.9, 1.1)
    shift: tuple[float, float] = (-0.1, 0.1)


def augment(sample: KeypointSample, params: AugmentParams, rng: np.random.Generator) -> KeypointSample:
    """One rotation, scale and shift per call, shared by every channel and frame."""
    if sample.D < 2:
        raise DataError(f"sample {sample.sample_id}: augmentation needs D >= 2")
    angle = math.radians(rng.uniform(*params.rotation))
    s = rng.uniform(*params.scale)
    shift = rng.uniform(params.shift[0], params.shift[1], size=2)
    rot = s * np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    chans = {}
    for c, x in sample.channels.items():
        x = x.copy()
        x[:, :2] = np.einsum("ij,tjn->tin", rot, x[:, :2]) + shift[None, :, None]
        chans[c] = x
    return sample.replace(chans)
