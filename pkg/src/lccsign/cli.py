"""Command-line interface: ``lccsign <command> [options]``.

Commands: gen-synth, train, eval, localize, export-sim, gradcheck.
Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .backbone import SignModel
from .checks import run_suite
from .config import OUTPUT_ENV, RunConfig, apply_overrides, default_output_dir
from .data import (
    KeypointSample,
    SyntheticSpec,
    WordEmbeddingTable,
    default_graphs,
    even_groups,
    generate_synthetic,
    load_graph_config,
    load_manifest,
    load_split,
    load_word_embeddings,
    save_dataset,
    save_word_vectors,
)
from .errors import ConfigError, ContractViolation, DataError, LccError, NumericalError
from .export import HeatmapExport, side_by_side, write_csv, write_matrix_csv, write_ppm
from .head import cosine_matrix, temporal_iou
from .tensor import load_checkpoint, save_checkpoint
from .train import embedding_similarity, ensemble_streams, evaluate, fit, localise_sample, score_samples

log = logging.getLogger("lccsign")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SPLITS = ("train", "val", "test")


class UsageError(LccError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------ data helpers


@dataclass
class RunData:
    glosses: list[str]
    splits: dict[str, list[KeypointSample]]
    words: WordEmbeddingTable | None
    windows: dict[str, tuple[int, int]] = field(default_factory=dict)
    graphs: dict = field(default_factory=default_graphs)

    @property
    def num_classes(self) -> int:
        return len(self.glosses)

    def find(self, sample_id: str) -> KeypointSample:
        for samples in self.splits.values():
            for s in samples:
                if s.sample_id == sample_id:
                    return s
        raise DataError(f"unknown sample id {sample_id!r}")


def load_run_data(run: RunConfig, need_words: bool, splits: Sequence[str] = SPLITS) -> RunData:
    """Load a dataset directory, or generate the configured synthetic one."""
    d = run.data
    graphs = load_graph_config(d.graph) if d.graph else default_graphs()
    if d.dataset is None:
        ds = generate_synthetic(d.synthetic)
        words = ds.words
        if d.words is not None:
            words = load_word_embeddings(d.words, ds.glosses, d.allow_missing_words, run.seed)
        return RunData(ds.glosses, ds.splits, words, ds.windows, graphs)

    manifest = load_manifest(d.dataset)
    loaded = {s: load_split(manifest, s) for s in splits if s in manifest.splits}
    words_path = Path(d.words) if d.words is not None else manifest.root / "words.txt"
    words = None
    if need_words or d.words is not None:
        if not words_path.exists():
            raise DataError(f"word vectors not found: {words_path}")
        words = load_word_embeddings(words_path, manifest.glosses, d.allow_missing_words, run.seed)
    elif words_path.exists():
        words = load_word_embeddings(words_path, manifest.glosses, True, run.seed)
    return RunData(manifest.glosses, loaded, words, manifest.windows, graphs)


@dataclass
class LoadedModel:
    model: SignModel
    run: RunConfig
    stream: str
    meta: dict
    path: Path

    @property
    def train_config(self):
        return self.run.train_config(self.stream)


def load_model(path: str | Path) -> LoadedModel:
    params, meta = load_checkpoint(path)
    if "config" not in meta or "num_classes" not in meta:
        raise DataError(f"{path}: checkpoint carries no run configuration")
    run = RunConfig.from_dict(meta["config"])
    graphs = load_graph_config(run.data.graph) if run.data.graph else default_graphs()
    model = SignModel(run.model_config(int(meta["num_classes"])), graphs, params={})
    expected = {k: v.shape for k, v in model.init_params(0).items()}
    params, _ = load_checkpoint(path, expected)
    model.params = params
    return LoadedModel(model, run, meta.get("stream", "joint"), meta, Path(path))


def _dataset_for(lm: LoadedModel, dataset: str | None, need_words: bool = False) -> RunData:
    run = lm.run if dataset is None else apply_overrides(lm.run, {"data.dataset": dataset})
    data = load_run_data(run, need_words)
    if data.num_classes != lm.model.cfg.num_classes:
        raise DataError(
            f"vocabulary mismatch: checkpoint {lm.path} has V={lm.model.cfg.num_classes} classes, "
            f"dataset has V={data.num_classes}"
        )
    return data


def _split(data: RunData, name: str) -> list[KeypointSample]:
    if name not in data.splits:
        raise DataError(f"split {name!r} not available (have {sorted(data.splits)})")
    return data.splits[name]


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


# ---------------------------------------------------------------- commands


def cmd_gen_synth(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"output directory {out} is not empty; pass --force to overwrite")
    spec = SyntheticSpec(
        num_classes=args.classes,
        T=args.frames,
        signal_window=(args.window_min, args.window_max),
        noise_scale=args.noise,
        concept_groups=even_groups(args.classes, args.groups) if args.groups else None,
        seed=args.seed,
        n_train=args.train,
        n_val=args.val,
        n_test=args.test,
        coord_dims=args.dims,
        word_dim=args.word_dim,
    )
    try:
        ds = generate_synthetic(spec)
    except ContractViolation as exc:
        raise UsageError(str(exc)) from None
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(out, ds.glosses, ds.splits, ds.windows)
    save_word_vectors(out / "words.txt", ds.words)
    sizes = ", ".join(f"{k}={len(v)}" for k, v in ds.splits.items())
    print(f"wrote {out}: V={len(ds.glosses)}, {sizes}, T={spec.T}, concept groups={len(ds.groups)}")
    return EXIT_OK


def _train_overrides(args) -> dict:
    o = {}
    simple = {
        "dataset": "data.dataset",
        "words": "data.words",
        "graph": "data.graph",
        "loss": "model.loss",
        "alpha": "weights.alpha",
        "beta": "weights.beta",
        "tau": "weights.tau",
        "p_channel": "drop_mask.p_channel",
        "p_temporal": "drop_mask.p_temporal",
        "epochs": "train.epochs",
        "batch_size": "train.batch_size",
        "lr": "train.base_lr",
        "sequence_length": "train.sequence_length",
        "seed": "seed",
        "out": "output_dir",
    }
    for attr, key in simple.items():
        v = getattr(args, attr, None)
        if v is not None:
            o[key] = v
    if args.allow_missing_words:
        o["data.allow_missing_words"] = True
    if args.streams is not None:
        o["streams"] = _str_list(args.streams)
    if args.heads is not None:
        o["fusion.heads"] = _str_list(args.heads)
    if args.channels is not None:
        o["model.backbone.channels"] = _int_list(args.channels)
    if args.strides is not None:
        o["model.backbone.strides"] = _int_list(args.strides)
    if args.no_augment:
        o["train.augment"] = False
    return o


def cmd_train(args) -> int:
    run = RunConfig.load(args.config) if args.config else RunConfig()
    run = apply_overrides(run, _train_overrides(args))
    need_words = run.model.loss == "lcc" and run.weights.alpha != 0
    data = load_run_data(run, need_words, splits=("train", "val"))
    train, val = _split(data, "train"), _split(data, "val")
    out = Path(run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    run.save(out / "config.yaml")

    for stream in run.streams:
        sdir = out / stream
        sdir.mkdir(exist_ok=True)
        cfg = run.train_config(stream)
        model = SignModel(run.model_config(data.num_classes), data.graphs, seed=run.seed)
        log_path = sdir / "train_log.jsonl"
        with open(log_path, "w", encoding="utf-8") as fh:
            def write(record, fh=fh):
                fh.write(json.dumps(record) + "\n")
                fh.flush()

            result = fit(train, val, model, cfg, data.words if need_words else None, on_epoch=write)
        meta = {
            "config": run.to_dict(),
            "stream": stream,
            "glosses": data.glosses,
            "num_classes": data.num_classes,
            "best_epoch": result.best_epoch,
            "best_val_top1": result.best_val_top1,
        }
        save_checkpoint(sdir / "checkpoint.json", result.model.params, meta)
        print(f"{stream}: best val top-1 {result.best_val_top1:.4f} at epoch {result.best_epoch}; wrote {sdir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ks = _int_list(args.topk)
    if not ks or min(ks) < 1:
        raise UsageError("--topk needs positive integers")
    header = ["split", "stream", *[f"top{k}_instance" for k in ks], *[f"top{k}_class" for k in ks]]
    rows, scores, labels = [], [], None
    seen = {}
    for path in args.checkpoints:
        lm = load_model(path)
        data = _dataset_for(lm, args.dataset)
        samples = _split(data, args.split)
        if not samples:
            raise DataError(f"split {args.split!r} is empty")
        labels = [s.label for s in samples]
        q_hat = score_samples(lm.model, samples, lm.train_config)
        scores.append(q_hat)
        m = evaluate(q_hat, labels, ks)
        name = lm.stream
        seen[name] = seen.get(name, 0) + 1
        if seen[name] > 1:
            name = f"{name}#{seen[name]}"
        rows.append([args.split, name, *[m.instance[k] for k in ks], *[m.per_class[k] for k in ks]])
    weights = [float(w) for w in args.weights.split(",")] if args.weights else None
    m = evaluate(ensemble_streams(scores, weights), labels, ks)
    rows.append([args.split, "ensemble", *[m.instance[k] for k in ks], *[m.per_class[k] for k in ks]])
    out = Path(args.out) if args.out else Path(default_output_dir()) / f"metrics_{args.split}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, header, rows)
    print(",".join(header))
    for r in rows:
        print(",".join(r[:2] + [f"{v:.4f}" for v in r[2:]]))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_localize(args) -> int:
    lm = load_model(args.checkpoint)
    data = _dataset_for(lm, args.dataset)
    cfg = lm.train_config
    V = lm.model.cfg.num_classes
    if args.samples:
        samples = [data.find(sid) for sid in _str_list(args.samples)]
    else:
        samples = _split(data, args.split)
    out = Path(args.out or default_output_dir()) / "localisation"
    out.mkdir(parents=True, exist_ok=True)

    summary, ious = [], []
    for s in samples:
        sl = localise_sample(lm.model, s, cfg, s.label if args.target == "label" else None)
        q, loc, pred, target, frames = sl.q, sl.result, sl.predicted, sl.target, sl.frames
        window = data.windows.get(s.sample_id)
        iou = temporal_iou(frames, window) if window is not None else None
        header = ["t", "background", "q_target", "argmax"] + (["iou"] if iou is not None else [])
        rows = []
        for t in range(q.shape[0]):
            row = [t, loc.background[t], q[t, target], int(loc.argmax[t])]
            rows.append(row + ([iou] if iou is not None else []))
        write_csv(out / f"{s.sample_id}.csv", header, rows)
        grid = np.vstack([q[:, :V].T, loc.background[None]])
        heat = HeatmapExport(grid, [*data.glosses, "background"])
        write_ppm(out / f"{s.sample_id}.ppm", heat.raster())
        seg_text = " ".join(f"{a:g}-{b:g}" for a, b in frames)
        summary.append([s.sample_id, s.label, pred, seg_text, "" if iou is None else iou])
        if iou is not None:
            ious.append(iou)
    write_csv(out / "summary.csv", ["sample_id", "label", "predicted", "segments_frames", "iou"], summary)
    print(f"localised {len(samples)} sample(s) into {out}")
    if ious:
        ious = np.array(ious)
        print(f"mean temporal IoU {ious.mean():.4f}; IoU >= 0.3 for {np.mean(ious >= 0.3):.1%} of samples")
    return EXIT_OK


def cmd_export_sim(args) -> int:
    out = Path(args.out or default_output_dir()) / "similarity"
    out.mkdir(parents=True, exist_ok=True)
    first = load_model(args.checkpoints[0])
    if args.words is not None:
        if not Path(args.words).exists():
            raise DataError(f"word vectors not found: {args.words}")
        words = load_word_embeddings(args.words, first.meta["glosses"], False, first.run.seed)
        glosses = list(first.meta["glosses"])
    else:
        data = _dataset_for(first, args.dataset, need_words=True)
        if data.words is None:
            raise DataError("no word vectors available; pass --words")
        words, glosses = data.words, data.glosses
    S_F = cosine_matrix(words.vectors)
    write_matrix_csv(out / "S_F.csv", S_F, glosses)
    images = [HeatmapExport(S_F, glosses, lo=-1.0, hi=1.0).raster()]
    multi = len(args.checkpoints) > 1
    for i, path in enumerate(args.checkpoints, start=1):
        lm = first if i == 1 else load_model(path)
        if lm.model.cfg.loss != "lcc" or "global" not in lm.model.cfg.heads:
            raise DataError(f"{path}: export-sim needs an LCC checkpoint with a global head")
        if lm.model.cfg.num_classes != len(glosses):
            raise DataError(f"vocabulary mismatch: checkpoint {path} has V={lm.model.cfg.num_classes}, words have V={len(glosses)}")
        S_E = embedding_similarity(lm.model)
        name = f"S_E_{i}.csv" if multi else "S_E.csv"
        write_matrix_csv(out / name, S_E, glosses)
        images.append(HeatmapExport(S_E, glosses, lo=-1.0, hi=1.0).raster())
        print(f"{path}: MSE(S_E, S_F) = {float(np.mean((S_E - S_F) ** 2)):.6g} -> {out / name}")
    write_ppm(out / "similarity.ppm", side_by_side(images))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    scopes = ("ops", "head", "end2end") if args.scope == "all" else (args.scope,)
    failed = 0
    for scope in scopes:
        for r in run_suite(scope, seed=args.seed):
            status = "PASS" if r.passed else "FAIL"
            failed += not r.passed
            print(f"{status} {scope:8s} {r.name:34s} max rel err {r.error:.3e} (tol {r.tol:.0e})")
    print("all checks passed" if not failed else f"{failed} check(s) failed")
    return EXIT_OK if not failed else EXIT_NUMERIC


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lccsign", description="Contrastive concept embeddings for sign recognition.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-synth", help="write a synthetic keypoint dataset with word vectors")
    g.add_argument("out")
    g.add_argument("--classes", type=int, default=10)
    g.add_argument("--train", type=int, default=400, help="total training samples")
    g.add_argument("--val", type=int, default=100)
    g.add_argument("--test", type=int, default=100)
    g.add_argument("--frames", type=int, default=64)
    g.add_argument("--window-min", type=int, default=16)
    g.add_argument("--window-max", type=int, default=32)
    g.add_argument("--noise", type=float, default=0.5)
    g.add_argument("--groups", type=int, default=None, help="number of concept groups")
    g.add_argument("--dims", type=int, default=3, choices=(2, 3))
    g.add_argument("--word-dim", type=int, default=32)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen_synth)

    t = sub.add_parser("train", help="train one model per requested stream")
    t.add_argument("--config")
    t.add_argument("--dataset")
    t.add_argument("--words")
    t.add_argument("--graph")
    t.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV} or ./runs)")
    t.add_argument("--loss", choices=("lcc", "ce"))
    t.add_argument("--alpha", type=float)
    t.add_argument("--beta", type=float)
    t.add_argument("--tau", type=float)
    t.add_argument("--p-channel", type=float)
    t.add_argument("--p-temporal", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--sequence-length", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--streams", help="comma list of joint, bone, joint_motion, bone_motion")
    t.add_argument("--heads", help="comma list; must include global")
    t.add_argument("--channels", help="backbone block widths, e.g. 16,32,64")
    t.add_argument("--strides", help="temporal stride per block, e.g. 1,2,2")
    t.add_argument("--allow-missing-words", action="store_true")
    t.add_argument("--no-augment", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="top-k metrics per checkpoint plus their ensemble")
    e.add_argument("checkpoints", nargs="+")
    e.add_argument("--dataset")
    e.add_argument("--split", default="test")
    e.add_argument("--topk", default="1,5")
    e.add_argument("--weights", help="comma list of ensemble weights, one per checkpoint")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    lo = sub.add_parser("localize", help="per-step background and target scores with heatmaps")
    lo.add_argument("checkpoint")
    lo.add_argument("--dataset")
    lo.add_argument("--samples", help="comma list of sample ids (default: whole split)")
    lo.add_argument("--split", default="test")
    lo.add_argument("--target", choices=("label", "predicted"), default="label")
    lo.add_argument("--out")
    lo.set_defaults(func=cmd_localize)

    x = sub.add_parser("export-sim", help="embedding and word-vector similarity matrices")
    x.add_argument("checkpoints", nargs="+")
    x.add_argument("--words")
    x.add_argument("--dataset")
    x.add_argument("--out")
    x.set_defaults(func=cmd_export_sim)

    c = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    c.add_argument("--scope", choices=("ops", "head", "end2end", "all"), default="all")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
