"""Keypoint channel layouts and skeleton graphs.

Body uses the 17-point COCO ordering, hands the 21-point MediaPipe hand
ordering and the mouth 40 lip landmarks (outer ring 0-19, inner ring 20-39).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from ..errors import ConfigError, ContractViolation

CHANNELS = ("body", "left_hand", "right_hand", "mouth")
NODE_COUNTS = {"body": 17, "left_hand": 21, "right_hand": 21, "mouth": 40}

# COCO: 0 nose, 1/2 eyes, 3/4 ears, 5/6 shoulders, 7/8 elbows, 9/10 wrists,
# 11/12 hips, 13/14 knees, 15/16 ankles
BODY_EDGES = [
    (0, 1), (0, 2), (1, 3), (2, 4), (0, 5), (0, 6), (5, 6),
    (5, 7), (7, 9), (6, 8), (8, 10), (5, 11), (6, 12), (11, 12),
    (11, 13), (13, 15), (12, 14), (14, 16),
]
# wrist <-> opposite elbow and wrist <-> nose
BODY_EXTRA_LINKS = [(9, 8), (10, 7), (9, 0), (10, 0)]

HAND_EDGES = [
    (0, 1), (1, 2), (2, 3), (3, 4),
    (0, 5), (5, 6), (6, 7), (7, 8),
    (5, 9), (9, 10), (10, 11), (11, 12),
    (9, 13), (13, 14), (14, 15), (15, 16),
    (13, 17), (0, 17), (17, 18), (18, 19), (19, 20),
]

MOUTH_EDGES = (
    [(i, (i + 1) % 20) for i in range(20)]
    + [(20 + i, 20 + (i + 1) % 20) for i in range(20)]
    + [(0, 20), (10, 30)]
)

SHOULDERS = (5, 6)


@dataclass
class SkeletonGraph:
    node_count: int
    edges: list[tuple[int, int]]
    bone_parent: dict[int, int]
    normalized_adjacency: np.ndarray = field(repr=False)
    extra_links: list[tuple[int, int]] = field(default_factory=list)


def normalized_adjacency(n: int, edges: Sequence[tuple[int, int]]) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` for an undirected edge list."""
    a = np.eye(n)
    for i, j in edges:
        if not (0 <= i < n and 0 <= j < n):
            raise ContractViolation(f"edge ({i}, {j}) out of range for {n} nodes")
        if i != j:
            a[i, j] = a[j, i] = 1.0
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return d[:, None] * a * d[None, :]


def bone_parents(n: int, edges: Sequence[tuple[int, int]], root: int = 0) -> dict[int, int]:
    """BFS spanning forest; every non-root node maps to its parent."""
    nbrs: list[list[int]] = [[] for _ in range(n)]
    for i, j in edges:
        nbrs[i].append(j)
        nbrs[j].append(i)
    parent: dict[int, int] = {}
    seen = [False] * n
    for start in [root] + [k for k in range(n) if k != root]:
        if seen[start]:
            continue
        seen[start] = True
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in sorted(nbrs[u]):
                if not seen[v]:
                    seen[v] = True
                    parent[v] = u
                    queue.append(v)
    return parent


def build_graph(n: int, edges, extra_links=(), root: int = 0) -> SkeletonGraph:
    edges = [tuple(map(int, e)) for e in edges]
    extra = [tuple(map(int, e)) for e in extra_links]
    return SkeletonGraph(
        node_count=n,
        edges=edges + extra,
        bone_parent=bone_parents(n, edges, root),
        normalized_adjacency=normalized_adjacency(n, edges + extra),
        extra_links=extra,
    )


def default_graphs(body_extra_links=BODY_EXTRA_LINKS) -> dict[str, SkeletonGraph]:
    return {
        "body": build_graph(17, BODY_EDGES, body_extra_links),
        "left_hand": build_graph(21, HAND_EDGES),
        "right_hand": build_graph(21, HAND_EDGES),
        "mouth": build_graph(40, MOUTH_EDGES),
    }


def graph_config_dict(graphs: Mapping[str, SkeletonGraph]) -> dict:
    out = {}
    for name in CHANNELS:
        g = graphs[name]
        base = [list(e) for e in g.edges if e not in g.extra_links]
        out[name] = {"edges": base, "extra_links": [list(e) for e in g.extra_links]}
    return out


def load_graph_config(path: str | Path) -> dict[str, SkeletonGraph]:
    """Read per-channel ``edges`` and ``extra_links`` index pairs from YAML.

    Channels absent from the file keep their default graph.
    """
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read graph config {path}: {exc}") from exc
    graphs = default_graphs()
    for name, spec in doc.items():
        if name not in NODE_COUNTS:
            raise ConfigError(f"{path}: unknown channel {name!r}")
        try:
            edges = spec.get("edges")
            if edges is None:
                edges = [e for e in graphs[name].edges if e not in graphs[name].extra_links]
            graphs[name] = build_graph(NODE_COUNTS[name], edges, spec.get("extra_links", []))
        except (ContractViolation, TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"{path}: channel {name}: {exc}") from exc
    return graphs
