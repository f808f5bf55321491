"""Spatio-temporal graph backbone, multi-channel fusion and the full sign model."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .data.skeleton import SkeletonGraph
from .errors import ContractViolation
from .head import DropMaskSpec, HeadOutputs, LccEmbeddingTable, LossWeights, lcc_head
from .tensor import Graph, Tensor, conv_output_length

HEAD_NAMES = ("global", "hands", "mouth", "pose")
# which backbone encodes each keypoint channel
CHANNEL_BACKBONE = {"body": "pose", "left_hand": "hands", "right_hand": "hands", "mouth": "mouth"}
BACKBONE_CHANNEL = {"pose": "body", "hands": "left_hand", "mouth": "mouth"}


@dataclass(frozen=True)
class BackboneConfig:
    channels: tuple[int, ...] = (16, 32, 64)
    strides: tuple[int, ...] = (1, 2, 2)
    window: int = 5
    dilation: int = 1
    in_dim: int = 3

    def __post_init__(self):
        if len(self.channels) != len(self.strides) or not self.channels:
            raise ContractViolation("backbone needs one stride per block and at least one block")

    @property
    def out_dim(self) -> int:
        return self.channels[-1]

    @property
    def temporal_stride(self) -> int:
        return int(np.prod(self.strides))

    def output_length(self, T: int) -> int:
        for s in self.strides:
            T = conv_output_length(T, s)
        return T


def init_backbone(cfg: BackboneConfig, rng: np.random.Generator, prefix: str) -> dict[str, np.ndarray]:
    params = {}
    cin = cfg.in_dim
    for i, cout in enumerate(cfg.channels):
        p = f"{prefix}.block{i}"
        params[f"{p}.gc.W"] = rng.normal(0.0, np.sqrt(2.0 / cin), size=(cin, cout))
        params[f"{p}.gc.b"] = np.zeros(cout)
        params[f"{p}.tc.W"] = rng.normal(0.0, np.sqrt(1.0 / (cfg.window * cout)), size=(cfg.window, cout, cout))
        params[f"{p}.tc.b"] = np.zeros(cout)
        cin = cout
    return params


def backbone_forward(
    g: Graph, x, adjacency: np.ndarray, params: Mapping[str, Tensor], cfg: BackboneConfig, prefix: str
) -> Tensor:
    """Encode ``(B, T, N, D)`` keypoints to spatially pooled ``(B, T', C)`` features.

    Each block is graph convolution, ReLU, then strided temporal convolution.
    """
    xv = x.values if isinstance(x, Tensor) else np.asarray(x)
    if xv.ndim != 4 or xv.shape[2] != adjacency.shape[0] or xv.shape[3] != cfg.in_dim:
        raise ContractViolation(
            f"backbone_forward: expected (B, T, {adjacency.shape[0]}, {cfg.in_dim}) input, got {xv.shape}"
        )
    h = x
    for i, stride in enumerate(cfg.strides):
        p = f"{prefix}.block{i}"
        h = g.matmul(adjacency, h)
        h = g.add(g.matmul(h, params[f"{p}.gc.W"]), params[f"{p}.gc.b"])
        h = g.relu(h)
        h = g.forward("conv1d_temporal", [h, params[f"{p}.tc.W"]], stride=stride, dilation=cfg.dilation, window=cfg.window)
        h = g.add(h, params[f"{p}.tc.b"])
    return g.mean(h, axis=2)


def fuse_channels(g: Graph, z_left: Tensor, z_right: Tensor, z_mouth: Tensor, z_pose: Tensor, params) -> dict[str, Tensor]:
    shapes = {z.shape for z in (z_left, z_right, z_mouth, z_pose)}
    if len(shapes) != 1:
        raise ContractViolation(f"fuse_channels: feature shapes differ: {sorted(shapes)}")
    z_hands = g.scale(g.add(z_left, z_right), 0.5)
    cat = g.concat([z_hands, z_mouth, z_pose], axis=-1)
    z_global = g.add(g.matmul(cat, params["fusion.W"]), params["fusion.b"])
    return {"hands": z_hands, "mouth": z_mouth, "pose": z_pose, "global": z_global}


def baseline_forward(g: Graph, z_hat: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """Temporal average pooling followed by a linear layer to class logits."""
    pooled = g.mean(z_hat, axis=z_hat.values.ndim - 2)
    if pooled.values.ndim == 1:
        logits = g.matmul(g.reshape(pooled, (1, pooled.shape[0])), W)
        return g.add(g.reshape(logits, (W.shape[1],)), b)
    return g.add(g.matmul(pooled, W), b)


def overall_loss(g: Graph, head_losses: Mapping[str, Tensor], enabled=HEAD_NAMES) -> Tensor:
    """Unweighted sum of the per-head losses."""
    terms = [head_losses[name] for name in HEAD_NAMES if name in enabled and name in head_losses]
    if not terms:
        raise ContractViolation("overall_loss: no enabled heads")
    total = terms[0]
    for t in terms[1:]:
        total = g.add(total, t)
    return total


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    extra_slots: int = 10
    variations: int = 3
    loss: str = "lcc"  # "lcc" or "ce"
    heads: tuple[str, ...] = HEAD_NAMES

    def __post_init__(self):
        if self.loss not in ("lcc", "ce"):
            raise ContractViolation(f"loss must be 'lcc' or 'ce', got {self.loss!r}")
        if "global" not in self.heads or not set(self.heads) <= set(HEAD_NAMES):
            raise ContractViolation(f"heads must include 'global' and be drawn from {HEAD_NAMES}, got {self.heads}")
        if self.extra_slots < 1 or self.variations < 1:
            raise ContractViolation("extra_slots and variations must be >= 1")


@dataclass
class ModelOutputs:
    heads: dict[str, HeadOutputs]
    loss: Tensor | None = None


class SignModel:
    """Per-channel backbones, fusion and one recognition head per channel group."""

    def __init__(self, cfg: ModelConfig, graphs: Mapping[str, SkeletonGraph], params=None, seed: int = 0):
        self.cfg = cfg
        self.graphs = dict(graphs)
        self.params: dict[str, np.ndarray] = dict(params) if params is not None else self.init_params(seed)

    def init_params(self, seed: int) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(seed)
        cfg, C = self.cfg, self.cfg.backbone.out_dim
        params = {}
        for name in ("pose", "hands", "mouth"):
            params.update(init_backbone(cfg.backbone, rng, f"backbone.{name}"))
        params["fusion.W"] = rng.normal(0.0, np.sqrt(1.0 / (3 * C)), size=(3 * C, C))
        params["fusion.b"] = np.zeros(C)
        for name in cfg.heads:
            if cfg.loss == "lcc":
                params[f"head.{name}.E"] = LccEmbeddingTable.init(C, cfg.num_classes, cfg.extra_slots, cfg.variations, rng).E
            else:
                params[f"head.{name}.fc.W"] = rng.normal(0.0, np.sqrt(1.0 / C), size=(C, cfg.num_classes))
                params[f"head.{name}.fc.b"] = np.zeros(cfg.num_classes)
        return params

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self.params.items()}

    @staticmethod
    def decays(name: str) -> bool:
        """Embedding tables are excluded from weight decay."""
        return not name.endswith(".E")

    def bind(self, g: Graph, requires_grad: bool = True) -> dict[str, Tensor]:
        return {k: g.leaf(v, requires_grad=requires_grad, name=k) for k, v in self.params.items()}

    def encode(self, g: Graph, P: Mapping[str, Tensor], batch: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
        bb = self.cfg.backbone
        B = batch["body"].shape[0]
        hands = np.concatenate([batch["left_hand"], batch["right_hand"]], axis=0)
        z_h = backbone_forward(g, hands, self.graphs["left_hand"].normalized_adjacency, P, bb, "backbone.hands")
        z_left = g.slice(z_h, 0, B, axis=0)
        z_right = g.slice(z_h, B, 2 * B, axis=0)
        z_mouth = backbone_forward(g, batch["mouth"], self.graphs["mouth"].normalized_adjacency, P, bb, "backbone.mouth")
        z_pose = backbone_forward(g, batch["body"], self.graphs["body"].normalized_adjacency, P, bb, "backbone.pose")
        return fuse_channels(g, z_left, z_right, z_mouth, z_pose, P)

    def forward(
        self,
        g: Graph,
        P: Mapping[str, Tensor],
        batch: Mapping[str, np.ndarray],
        weights: LossWeights,
        labels=None,
        S_F: np.ndarray | None = None,
        mask: DropMaskSpec | None = None,
        rng: np.random.Generator | None = None,
    ) -> ModelOutputs:
        feats = self.encode(g, P, batch)
        V = self.cfg.num_classes
        heads = {}
        for name in self.cfg.heads:
            if self.cfg.loss == "lcc":
                heads[name] = lcc_head(g, feats[name], P[f"head.{name}.E"], V, weights, labels, S_F, mask, rng)
            else:
                logits = baseline_forward(g, feats[name], P[f"head.{name}.fc.W"], P[f"head.{name}.fc.b"])
                out = HeadOutputs(None, None, g.softmax(logits, axis=-1))
                if labels is not None:
                    ce = g.cross_entropy(logits, np.asarray(labels))
                    out.losses = {"rec": ce, "total": ce}
                heads[name] = out
        loss = None
        if labels is not None:
            loss = overall_loss(g, {k: h.losses["total"] for k, h in heads.items()}, self.cfg.heads)
        return ModelOutputs(heads, loss)

    def infer(self, batch: Mapping[str, np.ndarray], weights: LossWeights, head: str = "global") -> HeadOutputs:
        g = Graph(check_finite=False)
        out = self.forward(g, self.bind(g, requires_grad=False), batch, weights)
        return out.heads[head]

    def scores(self, batch: Mapping[str, np.ndarray], weights: LossWeights) -> np.ndarray:
        """Clip-level existence vectors ``(B, V)`` from the global head."""
        return np.array(self.infer(batch, weights).q_hat.values)


def predict_from_scores(q_hat: np.ndarray) -> np.ndarray:
    # argmax picks the first maximum, so ties go to the lowest class index
    return np.argmax(np.asarray(q_hat), axis=-1)
