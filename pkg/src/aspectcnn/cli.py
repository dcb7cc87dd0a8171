"""Prepare SemEval data, train, evaluate and query aspect-level sentiment CNNs.

Subcommands: prepare, train, eval, predict, gradcheck.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import data as D
from .checkpoint import Checkpoint, CheckpointError
from .embeddings import EmbeddingTable, Vocabulary, file_digest, load_pretrained, random_table
from .model import predict_proba
from .synthetic import tiny_grad_check
from .tensor import RngStream
from .train import NumericalError, TrainConfig, Trainer, evaluate, params_from_checkpoint

log = logging.getLogger("aspectcnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
TASKS = {"3way": "three_way", "three_way": "three_way", "binary": "binary"}
ASPECT_FLAGS = ("tie_gate_bias", "pg_concat_general", "aspect_widths")


class UsageError(Exception):
    pass


def _hashes(paths):
    return {str(p): file_digest(p) for p in paths if p and Path(p).is_file()}


def write_manifest(out_dir, command, config, inputs, seed, started, warnings=(), outputs=()):
    manifest = {
        "command": command, "config": config, "inputs": _hashes(inputs), "outputs": _hashes(outputs),
        "seed": seed, "version": __version__, "warnings": list(warnings),
        "started": started, "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    path = Path(out_dir) / f"manifest-{command}.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def _args_dict(args):
    return {k: v for k, v in vars(args).items() if k != "func"}


def _now():
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


# -- prepare ------------------------------------------------------------------------


def cmd_prepare(args):
    started, warnings = _now(), []
    for p in (args.train_xml, args.test_xml, args.dev_split, args.embeddings):
        if p and not Path(p).is_file():
            raise D.DataError(f"missing input file: {p}")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    parsed_train = D.parse_semeval(args.train_xml)
    parsed_test = D.parse_semeval(args.test_xml)
    train_all = D.align_all(parsed_train.instances)
    test = D.align_all(parsed_test.instances)
    ids = D.read_split_ids(args.dev_split) if args.dev_split else None
    if ids is not None and len(ids) != D.DEV_SIZE:
        warnings.append(f"dev split lists {len(ids)} ids, expected {D.DEV_SIZE}")
    train, dev, fallback = D.apply_dev_split(train_all, ids, RngStream(args.seed, "split"),
                                             size=min(D.DEV_SIZE, len(train_all) // 5 or 1)
                                             if len(train_all) < 2 * D.DEV_SIZE else D.DEV_SIZE)
    if fallback:
        warnings.append("no --dev-split given; dev set is a seeded random draw")
    vocab = Vocabulary.build(inst.tokens for inst in train + dev + test)
    rng = RngStream(args.seed, "oov")
    if args.embeddings:
        table = load_pretrained(args.embeddings, vocab, rng, dim=args.dim)
    else:
        warnings.append("no --embeddings given; every word vector is OOV-initialized")
        table = random_table(vocab, args.dim, rng)
    split = D.DatasetSplit(train, dev, test)
    table_stats = D.stats(split, args.domain)
    report = {
        "table": table_stats,
        "parse": {"train": {"conflict_dropped": parsed_train.conflict, "misaligned": parsed_train.misaligned,
                            "instances": len(parsed_train.instances), "aligned": len(train_all)},
                  "test": {"conflict_dropped": parsed_test.conflict, "misaligned": parsed_test.misaligned,
                           "instances": len(parsed_test.instances), "aligned": len(test)}},
        "majority_agreement_test": D.majority_agreement(test),
        "embeddings": {"dim": table.dim, "hits": table.hits, "misses": table.misses,
                       "source_hash": table.source_hash},
        "dev_split_fallback": fallback,
        "tokenizer": "lowercase; word tokens \\w+(['-]\\w+)*; punctuation split off",
    }
    files = [out / "train.jsonl", out / "dev.jsonl", out / "test.jsonl", out / "vocab.txt",
             out / "embeddings.npy", out / "stats.json"]
    D.write_jsonl(train, files[0])
    D.write_jsonl(dev, files[1])
    D.write_jsonl(test, files[2])
    vocab.save(files[3])
    table.save(files[4])
    (out / "embedding_source.txt").write_text(table.source_hash + "\n")
    files[5].write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    print(D.format_stats(table_stats))
    ma = report["majority_agreement_test"]
    print(f"majority agreement (test): {ma['agree']}/{ma['total']} (tied {ma['tied']})")
    for w in warnings:
        log.warning(w)
    write_manifest(out, "prepare", _args_dict(args), [args.train_xml, args.test_xml, args.dev_split, args.embeddings],
                   args.seed, started, warnings, files)
    return EXIT_OK


# -- shared loading -----------------------------------------------------------------


def load_prepared(data_dir):
    data_dir = Path(data_dir)
    if not (data_dir / "vocab.txt").is_file():
        raise D.DataError(f"{data_dir} is not a prepared data directory")
    vocab = Vocabulary.load(data_dir / "vocab.txt")
    src = data_dir / "embedding_source.txt"
    table = EmbeddingTable.load(data_dir / "embeddings.npy",
                                src.read_text().strip() if src.is_file() else "none")
    splits = {name: D.read_jsonl(data_dir / f"{name}.jsonl") for name in ("train", "dev", "test")}
    return vocab, table, splits


def build_config(args) -> tuple[TrainConfig, list]:
    cfg = TrainConfig().to_dict()
    if args.config:
        with open(args.config) as fh:
            cfg.update(json.load(fh))
    overrides = {"model": args.model, "task": TASKS.get(args.task, args.task), "seed": args.seed,
                 "max_epochs": args.epochs, "lr": args.lr, "batch_size": args.batch_size, "l2": args.l2,
                 "maps_per_width": args.maps, "patience": args.patience, "precision": args.precision,
                 "tie_gate_bias": args.tie_gate_bias or None, "pg_concat_general": args.pg_concat_general or None,
                 "aspect_widths": args.aspect_widths}
    warnings = []
    if args.dropout is not None:
        cfg["dropout"] = {**cfg["dropout"], (args.model or cfg["model"]): args.dropout}
    for k, v in overrides.items():
        if v is not None:
            cfg[k] = v
    if cfg["model"] == "vanilla":
        passed = [k for k in ASPECT_FLAGS if overrides.get(k) is not None]
        if passed:
            warnings.append(f"vanilla model ignores aspect options: {', '.join(passed)}")
    try:
        return TrainConfig.from_dict(cfg), warnings
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None


# -- train --------------------------------------------------------------------------


def cmd_train(args):
    started = _now()
    config, warnings = build_config(args)
    for w in warnings:
        log.warning(w)
    vocab, table, splits = load_prepared(args.data_dir)
    split = D.to_task(D.DatasetSplit(splits["train"], splits["dev"], splits["test"]), config.task)
    enc = {name: D.encode_instances(getattr(split, name), vocab, config.task) for name in ("train", "dev", "test")}
    if not enc["train"]:
        raise D.DataError("training split is empty")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(config, table, enc["train"], enc["dev"])
    report = trainer.fit(enc["test"] or None)
    ckpt = trainer.checkpoint(vocab.digest(), table.source_hash,
                              extra={"data_dir": str(Path(args.data_dir).resolve()),
                                     "table_hash": table.digest()})
    ckpt.save(out / "checkpoint.bin")
    report.save(out / "report.json")
    print(f"best_epoch={report.best_epoch} dev_accuracy={report.dev_accuracy} "
          f"test_accuracy={report.test_accuracy}")
    write_manifest(out, "train", config.to_dict(),
                   [Path(args.data_dir) / f for f in ("train.jsonl", "dev.jsonl", "test.jsonl",
                                                      "vocab.txt", "embeddings.npy")] + [args.config],
                   config.seed, started, warnings, [out / "checkpoint.bin", out / "report.json"])
    return EXIT_OK


# -- eval / predict -------------------------------------------------------------------


def _open_checkpoint(path, vocab):
    try:
        return Checkpoint.load(path, vocab_hash=vocab.digest() if vocab else None)
    except FileNotFoundError:
        raise D.DataError(f"missing checkpoint: {path}") from None


def _check_table(ckpt, table):
    saved = ckpt.meta.get("table_hash")
    if saved and saved != table.digest():
        raise CheckpointError("table_hash mismatch: embeddings differ from the ones trained with")


def cmd_eval(args):
    started = _now()
    vocab, table, splits = load_prepared(args.data_dir)
    ckpt = _open_checkpoint(args.checkpoint, vocab)
    _check_table(ckpt, table)
    params = params_from_checkpoint(ckpt)
    config = TrainConfig.from_dict(ckpt.meta["config"])
    instances = D.to_task(D.DatasetSplit([], [], splits[args.split]), config.task).test
    if not instances:
        raise D.DataError(f"split {args.split!r} is empty")
    enc = D.encode_instances(instances, vocab, config.task)
    table = table.astype(config.dtype)
    acc = evaluate(params, enc, table)
    probs = predict_proba(enc, params, table)
    labels = D.LABELS[config.task]
    out_path = Path(args.out or Path(args.checkpoint).with_name(f"predictions-{args.split}.tsv"))
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("sentence_id\taspect\tgold\tpredicted\tp_pos\tp_neg\tp_neu\n")
        for inst, p in zip(instances, probs):
            pneu = f"{p[2]:.6f}" if len(p) > 2 else ""
            fh.write(f"{inst.sentence_id}\t{' '.join(inst.aspect)}\t{inst.label}\t{labels[int(p.argmax())]}"
                     f"\t{p[0]:.6f}\t{p[1]:.6f}\t{pneu}\n")
    print(f"accuracy={acc!r}")
    write_manifest(out_path.parent, "eval", _args_dict(args), [args.checkpoint], config.seed, started,
                   outputs=[out_path])
    return EXIT_OK


def cmd_predict(args):
    ckpt = _open_checkpoint(args.checkpoint, None)
    data_dir = args.data_dir or ckpt.meta.get("data_dir")
    if not data_dir:
        raise UsageError("--data-dir is required (checkpoint records none)")
    vocab, table, _ = load_prepared(data_dir)
    if vocab.digest() != ckpt.meta.get("vocab_hash"):
        raise CheckpointError("vocab_hash mismatch between checkpoint and data directory")
    _check_table(ckpt, table)
    start = args.sentence.lower().find(args.aspect.lower())
    if start < 0 or not args.aspect.strip():
        raise D.DataError(f"aspect {args.aspect!r} does not occur in the sentence")
    raw = D.RawInstance(args.sentence, args.aspect, start, start + len(args.aspect), "positive")
    inst = D.tokenize_align(raw)
    if inst is None:
        raise D.DataError(f"aspect {args.aspect!r} covers no tokens")
    params = params_from_checkpoint(ckpt)
    config = TrainConfig.from_dict(ckpt.meta["config"])
    enc = D.encode_instances([inst], vocab, "three_way")
    probs = predict_proba(enc, params, table.astype(config.dtype))[0]
    labels = D.LABELS[config.task]
    print(f"label={labels[int(probs.argmax())]}")
    print("probabilities=" + json.dumps({lab: float(p) for lab, p in zip(labels, probs)}))
    return EXIT_OK


# -- gradcheck --------------------------------------------------------------------------


def cmd_gradcheck(args):
    report = tiny_grad_check(args.model, args.seed, fault=args.inject_fault)
    for name, err in report.errors.items():
        print(f"{name:<22} {err:.3e}")
    ok = report.max_error < args.tol
    print(f"max_relative_error={report.max_error:.3e} ({'ok' if ok else 'FAILED'}, tol {args.tol:g})")
    return EXIT_OK if ok else EXIT_NUMERIC


# -- entry point ------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="aspectcnn", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="parse SemEval XML, split, build vocab and embeddings")
    p.add_argument("--train-xml", required=True)
    p.add_argument("--test-xml", required=True)
    p.add_argument("--dev-split", help="file of zero-based train indices, one per line")
    p.add_argument("--embeddings", help="GloVe-style text file")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dim", type=int, default=300)
    p.add_argument("--domain", default="", help="row-name prefix in the stats table, e.g. Restaurant")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model on a prepared data directory")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--model", choices=["vanilla", "pf", "pg"])
    p.add_argument("--task", choices=sorted(TASKS))
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON file of TrainConfig fields")
    p.add_argument("--out-dir", default="run")
    p.add_argument("--epochs", type=int, help="maximum epochs")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--l2", type=float)
    p.add_argument("--maps", type=int, help="feature maps per filter width")
    p.add_argument("--patience", type=int)
    p.add_argument("--dropout", type=float, help="dropout rate for the selected model")
    p.add_argument("--precision", choices=["double", "single"])
    p.add_argument("--aspect-widths", type=lambda s: [int(x) for x in s.split(",")])
    p.add_argument("--tie-gate-bias", action="store_true")
    p.add_argument("--pg-concat-general", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy and per-instance predictions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", "--data", dest="data_dir", required=True)
    p.add_argument("--split", choices=["dev", "test"], default="test")
    p.add_argument("--out", help="predictions TSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one (sentence, aspect) pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sentence", required=True)
    p.add_argument("--aspect", required=True)
    p.add_argument("--data-dir")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check on a tiny model")
    p.add_argument("--model", choices=["vanilla", "pf", "pg"], required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--inject-fault", type=float, default=0.0,
                   help="scale analytic gradients by 1+x (checker self-test)")
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (D.DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
