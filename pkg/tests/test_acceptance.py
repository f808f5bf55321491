"""Acceptance criteria, one test each, at their stated tolerances.

Every test records a single PASS/FAIL line which the conftest hook repeats
in an "acceptance criteria" section at the end of the run. The training
runs behind criteria 4 to 7 are shared through a session cache; together
they take roughly a quarter of an hour on one core.

Desk-scale training setup (library defaults are unchanged): a two-block
backbone with widths 8 and 16 and temporal strides 2 and 2, batch size 16,
60 epochs, and a drop mask with channel rate 0.1 and temporal rate 0.3.
"""

import math
import re
import time
from dataclasses import dataclass

import numpy as np
import pytest

import test_properties as props
from lccsign.backbone import BackboneConfig, ModelConfig, SignModel
from lccsign.checks import TOLERANCES
from lccsign.cli import EXIT_OK, main
from lccsign.data import SyntheticSpec, default_graphs, even_groups, generate_synthetic
from lccsign.head import DENOM_FLOOR, DropMaskSpec, LossWeights, cosine_matrix, recognition_head, similarity_scores, temporal_iou
from lccsign.tensor import Graph
from lccsign.train import (
    TrainConfig,
    concept_mse,
    embedding_similarity,
    evaluate,
    fit,
    localise_sample,
    score_samples,
)

ORACLE_INSTANCES = 1000


def verdict(record_property, number, title, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {title} | {detail}"
    record_property("acceptance", line)
    print(line)
    assert ok, line


# ------------------------------------------------------------------ training


SPEC = SyntheticSpec(num_classes=10, T=64, n_train=400, n_val=100, n_test=100, concept_groups=even_groups(10, 5))
BACKBONE = BackboneConfig(channels=(8, 16), strides=(2, 2))
RUNS = {
    "lcc": dict(loss="lcc", alpha=5.0, tau=0.1),
    "ce": dict(loss="ce", alpha=5.0, tau=0.1),
    "alpha0": dict(loss="lcc", alpha=0.0, tau=0.1),
    "tau05": dict(loss="lcc", alpha=5.0, tau=0.5),
}


@dataclass
class Run:
    model: SignModel
    log: list
    final: SignModel
    init_mse: float | None
    seconds: float
    cfg: TrainConfig


@pytest.fixture(scope="session")
def synthetic():
    return generate_synthetic(SPEC)


@pytest.fixture(scope="session")
def S_F(synthetic):
    return cosine_matrix(synthetic.words.vectors)


@pytest.fixture(scope="session")
def runs(synthetic, S_F):
    cache = {}

    def get(name):
        if name not in cache:
            opts = RUNS[name]
            model = SignModel(ModelConfig(SPEC.num_classes, BACKBONE, loss=opts["loss"]), default_graphs(), seed=0)
            cfg = TrainConfig(
                epochs=60,
                batch_size=16,
                drop_mask=DropMaskSpec(0.1, 0.3),
                weights=LossWeights(alpha=opts["alpha"], tau=opts["tau"]),
            )
            init_mse = concept_mse(model, S_F) if opts["loss"] == "lcc" else None
            start = time.perf_counter()
            result = fit(synthetic.train, synthetic.val, model, cfg, synthetic.words)
            seconds = time.perf_counter() - start
            final = SignModel(model.cfg, model.graphs, params=result.final_params)
            cache[name] = Run(result.model, result.log, final, init_mse, seconds, cfg)
        return cache[name]

    return get


def test_labels_are_synthetic_sizes(synthetic):
    assert (len(synthetic.train), len(synthetic.val), len(synthetic.test)) == (400, 100, 100)
    for split in (synthetic.train, synthetic.val, synthetic.test):
        counts = np.bincount([s.label for s in split], minlength=10)
        assert len(set(counts.tolist())) == 1


# ----------------------------------------------------------------- criterion 1


def test_criterion_1_gradient_suites(capsys, record_property):
    start = time.perf_counter()
    codes, worst = {}, {}
    for scope in ("ops", "head", "end2end"):
        codes[scope] = main(["gradcheck", "--scope", scope])
        out = capsys.readouterr().out
        errors = [float(v) for v in re.findall(r"max rel err (\S+)", out)]
        worst[scope] = max(errors) if errors else math.inf
    seconds = time.perf_counter() - start
    ok = (
        all(c == EXIT_OK for c in codes.values())
        and all(worst[s] <= TOLERANCES[s] for s in worst)
        and seconds < 120
    )
    detail = ", ".join(f"{s} max {worst[s]:.2e} (tol {TOLERANCES[s]:.0e})" for s in worst) + f"; {seconds:.1f} s"
    verdict(record_property, 1, "gradient suites", ok, detail)


# ----------------------------------------------------------------- criterion 2


def direct_existence(q, V):
    """Clip-level existence from plain Python sums over time, per sample."""
    if q.ndim == 3:
        return np.stack([direct_existence(row, V) for row in q])
    totals = [math.fsum(float(q[t, j]) for t in range(q.shape[0])) for j in range(V)]
    den = math.fsum(totals)
    return np.array([s / den for s in totals])


def valid_q(rng):
    """Non-negative rows summing to one, with in-vocabulary mass above the guard."""
    while True:
        T, V = int(rng.integers(1, 17)), int(rng.integers(1, 21))
        shape = (T, V + 10) if rng.random() < 0.5 else (int(rng.integers(1, 4)), T, V + 10)
        if rng.random() < 0.5:
            q = rng.dirichlet(np.full(V + 10, rng.uniform(0.3, 3.0)), size=shape[:-1])
        else:
            c = rng.uniform(-2.0, 2.0, size=shape) / rng.choice([0.1, 0.5, 1.0])
            q = np.exp(c - c.max(axis=-1, keepdims=True))
            q /= q.sum(axis=-1, keepdims=True)
        if q[..., :V].sum(axis=-2).sum(axis=-1).min() >= DENOM_FLOOR:
            return q, V


def test_criterion_2_existence_oracle(record_property):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    max_err = max_sum_err = 0.0
    unchanged = True
    for _ in range(ORACLE_INSTANCES):
        q, V = valid_q(rng)
        g = Graph()
        q_hat = recognition_head(g, g.leaf(q), V).values
        max_err = max(max_err, float(np.max(np.abs(q_hat - direct_existence(q, V)))))
        max_sum_err = max(max_sum_err, float(np.max(np.abs(q_hat.sum(axis=-1) - 1.0))))
        perturbed = q.copy()
        perturbed[..., V:] = rng.random(perturbed[..., V:].shape) * 5
        unchanged &= recognition_head(g, g.leaf(perturbed), V).values.tobytes() == q_hat.tobytes()
    seconds = time.perf_counter() - start
    ok = max_err <= 1e-12 and max_sum_err <= 1e-9 and unchanged and seconds < 30
    detail = (
        f"{ORACLE_INSTANCES} instances, max |diff| {max_err:.1e}, max |sum-1| {max_sum_err:.1e}, "
        f"extended columns inert: {unchanged}; {seconds:.1f} s"
    )
    verdict(record_property, 2, "existence-vector oracle", ok, detail)


# ----------------------------------------------------------------- criterion 3


def direct_similarity(z, E):
    """Mean plus max over variations of explicitly computed cosines."""
    C, V_ext, M = E.shape
    out = np.zeros((z.shape[0], V_ext))
    for t in range(z.shape[0]):
        zt = [float(v) for v in z[t]]
        zn = math.sqrt(math.fsum(v * v for v in zt))
        for v in range(V_ext):
            cos = []
            for m in range(M):
                e = [float(E[c, v, m]) for c in range(C)]
                en = math.sqrt(math.fsum(x * x for x in e))
                cos.append(math.fsum(a * b for a, b in zip(zt, e)) / (zn * en))
            out[t, v] = math.fsum(cos) / M + max(cos)
    return out


def test_criterion_3_similarity_oracle(record_property):
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    max_err = 0.0
    for _ in range(ORACLE_INSTANCES):
        C, M = int(rng.integers(1, 17)), int(rng.integers(1, 6))
        T, V_ext = int(rng.integers(1, 7)), int(rng.integers(2, 11))
        z = rng.standard_normal((T, C)) * rng.uniform(0.1, 10)
        E = rng.standard_normal((C, V_ext, M))
        g = Graph()
        got = similarity_scores(g, g.leaf(z), g.leaf(E)).values
        max_err = max(max_err, float(np.max(np.abs(got - direct_similarity(z, E)))))
    seconds = time.perf_counter() - start
    ok = max_err <= 1e-12
    verdict(record_property, 3, "similarity aggregation oracle", ok,
            f"{ORACLE_INSTANCES} instances, max |diff| {max_err:.1e}; {seconds:.1f} s")


# ----------------------------------------------------------------- criterion 4


def test_criterion_4_recognition(runs, synthetic, record_property):
    labels = [s.label for s in synthetic.test]
    acc = {}
    for name in ("lcc", "ce"):
        run = runs(name)
        acc[name] = evaluate(score_samples(run.model, synthetic.test, run.cfg), labels).top1_instance
    seconds = runs("lcc").seconds + runs("ce").seconds
    ok = acc["lcc"] >= 0.95 and acc["ce"] >= 0.90 and seconds < 15 * 60
    detail = f"test top-1 LCC {acc['lcc']:.3f} (>= 0.95), CE {acc['ce']:.3f} (>= 0.90); {seconds / 60:.1f} min"
    verdict(record_property, 4, "synthetic recognition", ok, detail)


# ----------------------------------------------------------------- criterion 5


def test_criterion_5_localisation(runs, synthetic, record_property):
    run = runs("lcc")
    ious = np.array([
        temporal_iou(localise_sample(run.model, s, run.cfg, s.label).frames, synthetic.windows[s.sample_id])
        for s in synthetic.test
    ])
    ok = ious.mean() >= 0.5 and np.mean(ious >= 0.3) >= 0.8
    detail = f"mean IoU {ious.mean():.3f} (>= 0.5), IoU >= 0.3 for {np.mean(ious >= 0.3):.0%} (>= 80%)"
    verdict(record_property, 5, "temporal localisation", ok, detail)


# ----------------------------------------------------------------- criterion 6


def group_contrast(S, groups):
    gid = np.empty(len(S), dtype=int)
    for i, members in enumerate(groups):
        gid[members] = i
    same = gid[:, None] == gid[None, :]
    off = ~np.eye(len(S), dtype=bool)
    return float(S[same & off].mean()), float(S[~same].mean())


def test_criterion_6_concept_alignment(runs, synthetic, S_F, record_property):
    with_concept = concept_mse(runs("lcc").final, S_F)
    without = concept_mse(runs("alpha0").final, S_F)
    within, across = group_contrast(embedding_similarity(runs("lcc").final), synthetic.groups)
    ok = with_concept <= 0.5 * without and within > across
    detail = (
        f"final MSE alpha=5 {with_concept:.4f} vs alpha=0 {without:.4f} (ratio {with_concept / without:.2f} <= 0.5); "
        f"S_E within-group {within:.3f} > cross-group {across:.3f}"
    )
    verdict(record_property, 6, "conceptual alignment", ok, detail)


# ----------------------------------------------------------------- criterion 7


def test_criterion_7_temperature_direction(runs, record_property):
    # matched epochs: every epoch of the two otherwise identical runs; the
    # comparison is the mean val top-1 across them (area under the curve)
    sharp = np.array([r["val_top1"] for r in runs("lcc").log])
    soft = np.array([r["val_top1"] for r in runs("tau05").log])
    lower, higher = int(np.sum(soft < sharp)), int(np.sum(soft > sharp))
    ok = soft.mean() < sharp.mean()
    detail = (
        f"mean val top-1 over {len(sharp)} matched epochs: tau=0.5 {soft.mean():.3f} vs tau=0.1 {sharp.mean():.3f}; "
        f"tau=0.5 lower at {lower} epochs, higher at {higher}"
    )
    verdict(record_property, 7, "temperature ablation direction", ok, detail)


# ----------------------------------------------------------------- criterion 8

PROPERTIES = [
    props.test_softmax_is_a_distribution,
    props.test_cosine_range_symmetry_and_scale,
    props.test_l2_normalize_unit_rows,
    props.test_recognition_head_normalised,
    props.test_drop_mask_is_symmetric,
    props.test_prediction_invariant_to_feature_scale,
    props.test_fusion_hand_swap,
    props.test_model_hand_swap,
    props.test_topk_ordering,
]


def test_criterion_8_invariant_suites(record_property):
    failed = []
    start = time.perf_counter()
    for prop in PROPERTIES:
        try:
            prop()
        except Exception as exc:  # report every failing property, not just the first
            failed.append(f"{prop.__name__}: {type(exc).__name__}")
    seconds = time.perf_counter() - start
    detail = f"{len(PROPERTIES)} properties x {props.N} examples, {len(failed)} failed; {seconds:.1f} s"
    if failed:
        detail += " (" + "; ".join(failed) + ")"
    verdict(record_property, 8, "invariant property suites", not failed and props.N >= 1000, detail)


# ----------------------------------------------------------------- criterion 9


def test_criterion_9_determinism(tmp_path, capsys, record_property):
    data = tmp_path / "data"
    gen = ["gen-synth", str(data), "--classes", "4", "--train", "16", "--val", "8", "--test", "4", "--frames", "32",
           "--window-min", "8", "--window-max", "16", "--groups", "2", "--seed", "5"]
    assert main(gen) == EXIT_OK
    out = tmp_path / "run"
    cmd = ["train", "--dataset", str(data), "--out", str(out), "--epochs", "3", "--batch-size", "4",
           "--sequence-length", "32", "--channels", "4,8", "--strides", "2,2", "--streams", "joint,bone_motion", "--seed", "9"]
    snapshots = []
    for _ in range(2):
        assert main(cmd) == EXIT_OK
        snapshots.append({str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
    capsys.readouterr()
    names = sorted(snapshots[0])
    identical = snapshots[0] == snapshots[1]
    expected = {f"{s}/{f}" for s in ("joint", "bone_motion") for f in ("train_log.jsonl", "checkpoint.json")}
    ok = identical and expected <= set(names)
    verdict(record_property, 9, "determinism", ok, f"{len(names)} files byte-identical across two runs: {identical}")


# ------------------------------------------------------- training invariants


def test_training_loss_halves_by_epoch_20(runs):
    log = runs("lcc").log
    assert log[19]["loss_total"] < 0.5 * log[0]["loss_total"]


def test_concept_alignment_improves_from_init(runs, S_F):
    run = runs("lcc")
    assert concept_mse(run.model, S_F) < run.init_mse
