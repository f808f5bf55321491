"""Invariant properties over many random instances.

Each property draws a seed and a few sizes from hypothesis and builds its
arrays with numpy, which keeps a thousand examples per property cheap.
"""

import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from lccsign.backbone import BackboneConfig, ModelConfig, SignModel, fuse_channels
from lccsign.data import CHANNELS, NODE_COUNTS, default_graphs
from lccsign.head import DENOM_FLOOR, DropMaskSpec, LossWeights, drop_feature_mask, lcc_head, recognition_head
from lccsign.tensor import Graph
from lccsign.train import evaluate

N = 1000
many = settings(max_examples=N, deadline=None, derandomize=True)

seeds = st.integers(0, 2**32 - 1)
dims = st.integers(1, 12)


def run(op, *xs, **attrs):
    g = Graph()
    return g.forward(op, [g.leaf(x) for x in xs], **attrs).values


@many
@given(seeds, dims, dims, st.floats(0.02, 10.0), st.floats(0.1, 60.0))
def test_softmax_is_a_distribution(seed, rows, cols, tau, spread):
    x = np.random.default_rng(seed).standard_normal((rows, cols)) * spread
    p = run("softmax", x, temperature=tau, axis=-1)
    assert np.all(p >= 0) and np.all(p <= 1)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
    # order preserving along the softmax axis
    assert np.array_equal(np.argmax(p, axis=-1), np.argmax(x, axis=-1))


@many
@given(seeds, dims, st.integers(1, 16), st.floats(1e-3, 1e3))
def test_cosine_range_symmetry_and_scale(seed, rows, C, scale):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((rows, C)), rng.standard_normal((rows, C))
    cos = run("cosine_similarity", a, b)
    assert np.all(np.abs(cos) <= 1.0 + 1e-12)
    np.testing.assert_allclose(cos, run("cosine_similarity", b, a), atol=1e-15)
    np.testing.assert_allclose(cos, run("cosine_similarity", a * scale, b), atol=1e-12)
    np.testing.assert_allclose(run("cosine_similarity", a, a), 1.0, atol=1e-12)


@many
@given(seeds, dims, st.integers(1, 16), st.floats(1e-3, 1e3))
def test_l2_normalize_unit_rows(seed, rows, C, scale):
    x = np.random.default_rng(seed).standard_normal((rows, C)) * scale
    np.testing.assert_allclose(np.linalg.norm(run("l2_normalize", x, axis=-1), axis=-1), 1.0, atol=1e-12)


@many
@given(seeds, st.integers(1, 4), st.integers(1, 10), st.integers(2, 12), st.floats(0, 0.99), st.floats(0, 0.99))
def test_drop_mask_is_symmetric(seed, B, T, C, p_channel, p_temporal):
    rng = np.random.default_rng(seed)
    # strictly positive inputs so every zero comes from the mask
    z = rng.random((B, T, C)) + 0.1
    E = rng.random((C, 5, 2)) + 0.1
    g = Graph()
    zm, Em = drop_feature_mask(g, g.leaf(z), g.leaf(E), DropMaskSpec(p_channel, p_temporal), rng)
    zm, Em = zm.values, Em.values
    dead_rows_E = np.all(Em == 0, axis=(1, 2))
    live_times = ~np.all(zm == 0, axis=2)
    # on every surviving time row, a channel is zero in z exactly when it is dropped in E
    assert np.array_equal(zm[live_times] == 0, np.broadcast_to(dead_rows_E, zm[live_times].shape))
    # E is either kept or zeroed whole-row; nothing else changes
    np.testing.assert_array_equal(Em[~dead_rows_E], E[~dead_rows_E])
    # z entries are either the original value or zero
    assert np.all((zm == z) | (zm == 0))


@many
@given(seeds, st.integers(1, 8), st.integers(1, 6), st.integers(2, 8), st.integers(1, 4), st.floats(1e-3, 1e3))
def test_prediction_invariant_to_feature_scale(seed, T, V, C, M, scale):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((T, C))
    E = rng.standard_normal((C, V + 3, M))
    g = Graph()
    Et = g.leaf(E)
    a = lcc_head(g, g.leaf(z), Et, V, LossWeights()).q_hat.values
    b = lcc_head(g, g.leaf(z * scale), Et, V, LossWeights()).q_hat.values
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)
    assert np.argmax(a) == np.argmax(b) or np.isclose(a.max(), a[np.argmax(b)], rtol=1e-9)


@many
@given(seeds, st.integers(1, 3), st.integers(1, 6), st.integers(1, 8))
def test_fusion_hand_swap(seed, B, T, C):
    rng = np.random.default_rng(seed)
    zl, zr, zm, zp = rng.standard_normal((4, B, T, C))
    g = Graph()
    params = {"fusion.W": g.leaf(rng.standard_normal((3 * C, C))), "fusion.b": g.leaf(rng.standard_normal(C))}
    a = fuse_channels(g, *(g.leaf(v) for v in (zl, zr, zm, zp)), params)
    b = fuse_channels(g, *(g.leaf(v) for v in (zr, zl, zm, zp)), params)
    for k in ("global", "hands"):
        assert a[k].values.tobytes() == b[k].values.tobytes()


_MODEL = SignModel(
    ModelConfig(3, BackboneConfig(channels=(4,), strides=(2,), window=3), extra_slots=2, variations=2),
    default_graphs(),
    seed=0,
)


@many
@given(seeds, st.integers(1, 2), st.integers(2, 8))
def test_model_hand_swap(seed, B, T):
    rng = np.random.default_rng(seed)
    batch = {c: rng.standard_normal((B, T, NODE_COUNTS[c], 3)) for c in CHANNELS}
    swapped = dict(batch, left_hand=batch["right_hand"], right_hand=batch["left_hand"])
    outs = []
    for b in (batch, swapped):
        outs.append(_MODEL.infer(b, LossWeights()).q_hat.values)
    np.testing.assert_allclose(outs[0], outs[1], rtol=1e-12, atol=1e-15)


@many
@given(seeds, st.integers(1, 40), st.integers(1, 12))
def test_topk_ordering(seed, n, V):
    rng = np.random.default_rng(seed)
    scores = rng.random((n, V))
    labels = rng.integers(0, V, n)
    ks = tuple(range(1, V + 1))
    m = evaluate(scores, labels, ks)
    for table in (m.instance, m.per_class):
        vals = [table[k] for k in ks]
        assert all(0.0 <= v <= 1.0 for v in vals)
        assert all(a <= b for a, b in zip(vals, vals[1:]))
        assert vals[-1] == 1.0
    k5 = min(5, V)
    assert m.instance[1] <= m.instance[k5]


@many
@given(seeds, st.integers(1, 16), st.integers(1, 20), st.floats(0.1, 10.0))
def test_recognition_head_normalised(seed, T, V, concentration):
    q = np.random.default_rng(seed).dirichlet(np.full(V + 10, concentration), size=T)
    # below the floor the guard deliberately breaks normalisation (covered in test_head)
    assume(q[:, :V].sum() >= DENOM_FLOOR)
    g = Graph()
    q_hat = recognition_head(g, g.leaf(q), V).values
    assert np.all(q_hat >= 0) and np.all(q_hat <= 1)
    assert abs(q_hat.sum() - 1.0) <= 1e-9
