"""Command-line entry point: ``labelgen {synth,train,eval,profile}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
divergence during training.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .data.batches import E_TAG
from .data.folder import export_corpus, label_to_dirname, load_corpus
from .data.registry import Corpus, Registry, register_default_layout
from .data.synth import synth_generate
from .inference import write_predictions
from .metrics import evaluate, results_table
from .model.bundle import ModelBundle, init_weights
from .model.complexity import profile
from .tokenizer import build_vocabulary, max_sequence_length
from .training.loop import DivergenceError, train

log = logging.getLogger("labelgen")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


class DataError(RuntimeError):
    pass


def load_split(cfg: RunConfig, reg: Registry, split: str, data_path: str | None = None) -> list[Corpus]:
    """Every registered dataset's ``split``, from an image folder or the synthetic generator."""
    root = data_path or (cfg.data.path if cfg.data.source == "folder" else None)
    out = []
    for spec in reg.datasets:
        if split not in spec.splits:
            continue
        task = reg.task(spec.task)
        if root is not None:
            try:
                out.append(load_corpus(root, spec.name, split, task, cfg.data.image_size))
            except (FileNotFoundError, ValueError, OSError) as e:
                raise DataError(str(e)) from e
        else:
            n = cfg.data.per_class.get(split, 0)
            if n <= 0:
                continue
            # task hues are indexed over the full layout so subsets see the same images
            out.append(synth_generate(spec, register_default_layout(), cfg.data.image_size, cfg.seed,
                                      {split: n})[split])
    if not out:
        raise DataError(f"no {split} data for datasets {[d.name for d in reg.datasets]}")
    return out


def build_bundle(cfg: RunConfig, reg: Registry) -> ModelBundle:
    if cfg.setting != E_TAG:
        return init_weights(cfg.extractor_config(), None, reg.tasks, cfg.setting, cfg.seed)
    labels = reg.all_labels()
    vocab = build_vocabulary(labels)
    T = max_sequence_length(labels)
    return init_weights(cfg.extractor_config(), cfg.decoder_config(len(vocab), T), reg.tasks, cfg.setting,
                        cfg.seed, vocab, T, cfg.model.n_prefix, cfg.model.projector_hidden)


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "data", None):
        cfg.data.source, cfg.data.path = "folder", args.data
    cfg.validate()
    return cfg


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return _apply_overrides(cfg, args)


def cmd_synth(args) -> int:
    cfg = _config(args)
    root = Path(args.out or cfg.data.path or Path(cfg.out_dir) / "data")
    reg = cfg.registry()
    rows = ["dataset\tsplit\tlabel\tcount\tseed"]
    for spec in reg.datasets:
        corpora = synth_generate(spec, register_default_layout(), cfg.data.image_size, cfg.seed, cfg.data.per_class)
        for split, corpus in corpora.items():
            export_corpus(corpus, root)
            for label in corpus.labels:
                n = len(list((root / spec.name / split / label_to_dirname(label)).glob("*.png")))
                rows.append(f"{spec.name}\t{split}\t{label}\t{n}\t{cfg.seed}")
    (root / "manifest.tsv").write_text("\n".join(rows) + "\n")
    print(f"wrote synthetic corpus to {root}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    reg = cfg.registry()
    train_data = load_split(cfg, reg, "train", args.data)
    val_data = load_split(cfg, reg, "val", args.data) if any("val" in d.splits for d in reg.datasets) else []
    bundle = build_bundle(cfg, reg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    best, trace = train(bundle, train_data, cfg.train_config(), val_data)
    save_checkpoint(best, out / "best.ckpt", {"epoch": trace.best_epoch})
    save_checkpoint(bundle, out / "last.ckpt", {"epoch": cfg.train.epochs - 1})
    (out / "trace.tsv").write_text(trace.to_tsv())
    (out / "config.json").write_text(cfg.to_json())
    print(f"best epoch {trace.best_epoch} (mean val acc {trace.best_score}); outputs in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if not args.checkpoint:
        raise ConfigError("eval needs --checkpoint")
    try:
        bundle = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise DataError(f"checkpoint {args.checkpoint} not found") from None
    cfg = _config(args)
    task_names = {t.name for t in bundle.tasks}
    reg = cfg.registry()
    reg = Registry(tuple(t for t in reg.tasks if t.name in task_names),
                   tuple(d for d in reg.datasets if d.task in task_names))
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / f"eval_{args.split}"
    out.mkdir(parents=True, exist_ok=True)
    reports, predictions = [], []
    metrics_dir = out / "metrics"
    metrics_dir.mkdir(exist_ok=True)
    for corpus in load_split(cfg, reg, args.split, args.data):
        ev = evaluate(bundle, corpus, bundle.task(corpus.task))
        reports.append(ev.report)
        predictions += ev.predictions
        (metrics_dir / f"{corpus.dataset}.tsv").write_text(ev.report.to_kv())
    (out / "results.tsv").write_text(results_table(reports))
    write_predictions(out / "predictions.jsonl", predictions)
    sys.stdout.write(results_table(reports))
    return EXIT_OK


def cmd_profile(args) -> int:
    cfg = _config(args)
    if args.checkpoint:
        try:
            bundle = load_checkpoint(args.checkpoint)
        except FileNotFoundError:
            raise DataError(f"checkpoint {args.checkpoint} not found") from None
    else:
        bundle = build_bundle(cfg, cfg.registry())
    size = cfg.data.image_size
    p = cfg.profile
    report = profile(bundle, (size, size), p.batch_size, p.iters, p.warmup)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "complexity.tsv").write_text(report.to_kv())
    layers = ["name\tkind\tparams\tflops"] + [f"{l.name}\t{l.kind}\t{l.params}\t{l.flops}" for l in report.layers]
    (out / "layers.tsv").write_text("\n".join(layers) + "\n")
    sys.stdout.write(report.to_kv())
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "profile": cmd_profile}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="labelgen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--checkpoint", help="checkpoint file (eval, profile)")
        p.add_argument("--data", help="image-folder root; overrides the configured data source")
        p.add_argument("--split", choices=("train", "val", "test"), default="test")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help="cap BLAS/OpenMP threads")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limits = contextlib.nullcontext()
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        from threadpoolctl import threadpool_limits
        limits = threadpool_limits(limits=args.threads)
    try:
        with limits:
            return COMMANDS[args.command](args)
    except (ConfigError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
