"""Graph backbone, channel fusion, baseline head and the assembled model."""

import numpy as np
import pytest

from lccsign.backbone import (
    HEAD_NAMES,
    BackboneConfig,
    ModelConfig,
    SignModel,
    backbone_forward,
    baseline_forward,
    fuse_channels,
    init_backbone,
    overall_loss,
    predict_from_scores,
)
from lccsign.checks import TOLERANCES, end2end_suite
from lccsign.data import CHANNELS, NODE_COUNTS, build_graph
from lccsign.errors import ContractViolation
from lccsign.head import LossWeights, lcc_head
from lccsign.tensor import Graph, backward


def batch_for(rng, B=2, T=8, D=3):
    return {c: rng.standard_normal((B, T, NODE_COUNTS[c], D)) for c in CHANNELS}


@pytest.fixture
def small_model(graphs):
    cfg = ModelConfig(num_classes=3, backbone=BackboneConfig(channels=(4, 6), strides=(1, 2), window=3))
    return SignModel(cfg, graphs, seed=1)


class TestBackbone:
    def test_identity_single_block_constant_nodes(self):
        cfg = BackboneConfig(channels=(3,), strides=(1,), window=1)
        A = build_graph(4, [(0, 1), (1, 2), (2, 3)]).normalized_adjacency
        g = Graph()
        params = {
            "bb.block0.gc.W": g.leaf(np.eye(3)),
            "bb.block0.gc.b": g.leaf(np.zeros(3)),
            "bb.block0.tc.W": g.leaf(np.eye(3)[None]),
            "bb.block0.tc.b": g.leaf(np.zeros(3)),
        }
        x = np.broadcast_to(np.array([0.5, 1.0, 2.0]), (1, 5, 4, 3)).copy()
        z = backbone_forward(g, x, A, params, cfg, "bb").values
        assert z.shape == (1, 5, 3)
        # a non-regular graph scales nodes differently, but every time row is the same
        np.testing.assert_allclose(z, np.broadcast_to(z[:, :1], z.shape), atol=1e-15)

    def test_strides_16_to_4(self, rng):
        cfg = BackboneConfig(channels=(4, 5), strides=(2, 2))
        assert cfg.output_length(16) == 4 and cfg.temporal_stride == 4
        A = np.eye(3)
        g = Graph()
        params = {k: g.leaf(v) for k, v in init_backbone(cfg, rng, "bb").items()}
        z = backbone_forward(g, rng.standard_normal((2, 16, 3, 3)), A, params, cfg, "bb")
        assert z.shape == (2, 4, 5)

    def test_ceil_length(self):
        cfg = BackboneConfig(channels=(2, 2, 2), strides=(2, 2, 2))
        assert [cfg.output_length(T) for T in (1, 7, 8, 9)] == [1, 1, 1, 2]

    def test_shape_mismatch(self, rng):
        cfg = BackboneConfig(channels=(2,), strides=(1,))
        g = Graph()
        params = {k: g.leaf(v) for k, v in init_backbone(cfg, rng, "bb").items()}
        with pytest.raises(ContractViolation, match="backbone_forward"):
            backbone_forward(g, rng.standard_normal((1, 4, 5, 3)), np.eye(4), params, cfg, "bb")

    def test_config_validation(self):
        with pytest.raises(ContractViolation):
            BackboneConfig(channels=(4, 8), strides=(1,))


class TestFusion:
    def fuse(self, rng, zl, zr, zm, zp, W=None):
        g = Graph()
        C = zl.shape[-1]
        params = {"fusion.W": g.leaf(W if W is not None else rng.standard_normal((3 * C, C))), "fusion.b": g.leaf(np.zeros(C))}
        return {k: v.values for k, v in fuse_channels(g, *(g.leaf(z) for z in (zl, zr, zm, zp)), params).items()}

    def test_equal_hands(self, rng):
        z = rng.standard_normal((4, 3))
        out = self.fuse(rng, z, z, rng.standard_normal((4, 3)), rng.standard_normal((4, 3)))
        np.testing.assert_allclose(out["hands"], z, atol=1e-15)
        assert out["global"].shape == (4, 3)

    def test_zero_weights(self, rng):
        zs = rng.standard_normal((4, 5, 3))
        out = self.fuse(rng, *zs, W=np.zeros((9, 3)))
        np.testing.assert_array_equal(out["global"], 0.0)

    def test_mismatch(self, rng):
        with pytest.raises(ContractViolation, match="fuse_channels"):
            self.fuse(rng, np.ones((4, 3)), np.ones((4, 3)), np.ones((5, 3)), np.ones((4, 3)))


class TestBaselineAndLoss:
    def test_constant_time_pools_to_row(self, rng):
        row = rng.standard_normal(3)
        g = Graph()
        W = rng.standard_normal((3, 4))
        logits = baseline_forward(g, g.leaf(np.tile(row, (5, 1))), g.leaf(W), g.leaf(np.zeros(4))).values
        np.testing.assert_allclose(logits, row @ W)

    def test_zero_weights_give_bias(self, rng):
        g = Graph()
        b = np.array([1.0, -2.0, 0.5])
        logits = baseline_forward(g, g.leaf(rng.standard_normal((2, 6, 4))), g.leaf(np.zeros((4, 3))), g.leaf(b)).values
        np.testing.assert_array_equal(logits, np.tile(b, (2, 1)))
        assert logits.shape[-1] == 3

    def test_overall_loss_sum(self):
        g = Graph()
        losses = {name: g.leaf(float(i + 1)) for i, name in enumerate(HEAD_NAMES)}
        assert overall_loss(g, losses).item() == 10.0
        zeros = {name: g.leaf(0.0) for name in HEAD_NAMES}
        assert overall_loss(g, zeros).item() == 0.0
        assert overall_loss(g, losses, enabled=("global", "hands", "pose")).item() == 10.0 - losses["mouth"].item()

    def test_predict_ties(self):
        assert predict_from_scores(np.array([0.1, 0.7, 0.2])) == 1
        assert predict_from_scores(np.array([0.5, 0.5])) == 0


class TestSignModel:
    def test_forward_shapes(self, small_model, rng):
        g = Graph()
        out = small_model.forward(g, small_model.bind(g), batch_for(rng), LossWeights(), labels=[0, 2], S_F=np.eye(3))
        assert set(out.heads) == set(HEAD_NAMES)
        assert out.heads["global"].q.shape == (2, 4, 13)
        assert out.heads["global"].q_hat.shape == (2, 3)
        grads = backward(g, out.loss)
        assert all(np.isfinite(v).all() for v in grads.values())

    def test_param_namespaces(self, small_model):
        names = set(small_model.params)
        assert {"head.global.E", "head.hands.E", "fusion.W"} <= names
        assert any(n.startswith("backbone.hands.") for n in names)
        assert not any("left_hand" in n or "right_hand" in n for n in names)

    def test_channel_separation(self, small_model, rng):
        b1 = batch_for(rng)
        b2 = {k: v.copy() for k, v in b1.items()}
        b2["mouth"] += rng.standard_normal(b2["mouth"].shape)
        feats = []
        for b in (b1, b2):
            g = Graph()
            feats.append({k: v.values for k, v in small_model.encode(g, small_model.bind(g, False), b).items()})
        assert feats[0]["hands"].tobytes() == feats[1]["hands"].tobytes()
        assert feats[0]["pose"].tobytes() == feats[1]["pose"].tobytes()
        assert not np.allclose(feats[0]["mouth"], feats[1]["mouth"])
        assert not np.allclose(feats[0]["global"], feats[1]["global"])

    def test_scale_invariant_prediction(self, small_model, rng):
        g = Graph()
        z = small_model.encode(g, small_model.bind(g, False), batch_for(rng))["global"]
        E = g.leaf(small_model.params["head.global.E"])
        a = lcc_head(g, z, E, 3, LossWeights()).q_hat.values
        b = lcc_head(g, g.scale(z, 7.5), E, 3, LossWeights()).q_hat.values
        np.testing.assert_allclose(a, b, rtol=1e-12)
        np.testing.assert_array_equal(predict_from_scores(a), predict_from_scores(b))

    def test_ce_model(self, graphs, rng):
        cfg = ModelConfig(num_classes=3, backbone=BackboneConfig(channels=(4,), strides=(2,), window=3), loss="ce")
        m = SignModel(cfg, graphs)
        assert "head.global.fc.W" in m.params and "head.global.E" not in m.params
        g = Graph()
        P = m.bind(g)
        out = m.forward(g, P, batch_for(rng), LossWeights(), labels=[0, 1])
        np.testing.assert_allclose(out.heads["global"].q_hat.values.sum(axis=1), 1.0)
        assert np.isfinite(backward(g, out.loss).of(P["fusion.W"])).all()

    def test_disabled_heads(self, graphs, rng):
        cfg = ModelConfig(num_classes=3, backbone=BackboneConfig(channels=(4,), strides=(1,), window=3), heads=("global", "pose"))
        m = SignModel(cfg, graphs)
        assert "head.mouth.E" not in m.params
        g = Graph()
        out = m.forward(g, m.bind(g), batch_for(rng, T=4), LossWeights(alpha=0.0), labels=[0, 1])
        expected = out.heads["global"].losses["total"].item() + out.heads["pose"].losses["total"].item()
        assert out.loss.item() == pytest.approx(expected, rel=1e-15)

    def test_bad_heads(self):
        with pytest.raises(ContractViolation):
            ModelConfig(num_classes=3, heads=("hands",))

    def test_embedding_excluded_from_decay(self):
        assert not SignModel.decays("head.global.E")
        assert SignModel.decays("fusion.W")

    def test_seeded_init(self, graphs):
        cfg = ModelConfig(num_classes=3, backbone=BackboneConfig(channels=(4,), strides=(1,)))
        a, b = SignModel(cfg, graphs, seed=5), SignModel(cfg, graphs, seed=5)
        assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)

    def test_end_to_end_gradients(self):
        for r in end2end_suite(seed=0):
            assert r.error <= TOLERANCES["end2end"], r.name
