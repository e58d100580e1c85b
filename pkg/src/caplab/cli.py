"""Command-line interface.

Subcommands: build-vocab, train, caption, evaluate, compare.
Exit codes: 0 ok, 2 usage, 3 data problem, 4 internal failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import inference
from .corpus import UNK, CaptionCorpus, Vocabulary, load_split, tokenize
from .exceptions import CaplabError, DataError, ParseError, UsageError
from .features import read_capf
from .metrics import MetricReport, evaluate_run
from .training import TrainConfig, load_checkpoint, train
from .validation import check_ids_covered

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4

RUN_FILES = ("config.json", "checkpoint.ckpt", "trainlog.csv", "report.json")

_CONFIG_FLAGS = {
    "embed_dim": int, "hidden_dim": int, "attention_dim": int,
    "learning_rate": float, "batch_size": int, "max_epochs": int,
    "clip_norm": float, "early_stop_patience": int, "max_len": int,
}


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{what} not found: {p}")
    return p


def dataset_hash(corpus: CaptionCorpus, image_ids) -> str:
    """Digest of the references actually scored, so compare can insist that
    runs were evaluated on identical data."""
    canon = json.dumps(
        [[i, corpus.references(i)] for i in sorted(image_ids)],
        sort_keys=True, separators=(",", ":"),
    )
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def cmd_build_vocab(args) -> int:
    corpus = CaptionCorpus.load(_require_file(args.captions, "captions file"))
    if args.split:
        ids = load_split(_require_file(args.split, "split file"))
        check_ids_covered(ids, corpus.by_image, what="captions")
        corpus = corpus.subset(ids)
    vocab = Vocabulary.build((r.tokens for r in corpus.records),
                             min_freq=args.min_freq)
    vocab.save(args.out)
    print(f"wrote {args.out}: {len(vocab)} token ids "
          f"({len(vocab) - 4} words, min_freq={vocab.min_freq})")
    return EXIT_OK


def cmd_train(args) -> int:
    store = read_capf(_require_file(args.features, "features file"))
    vocab = Vocabulary.load(_require_file(args.vocab, "vocabulary file"))
    corpus = CaptionCorpus.load(_require_file(args.captions, "captions file"))
    train_ids = load_split(_require_file(args.split_train, "train split"))
    val_ids = load_split(_require_file(args.split_val, "validation split"))

    fields = {}
    if args.config:
        with open(_require_file(args.config, "config file"), encoding="utf-8") as fh:
            try:
                fields.update(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ParseError(f"{args.config}: not valid JSON: {exc}") from exc
    if args.variant:
        fields["variant"] = args.variant
    for name in _CONFIG_FLAGS:
        value = getattr(args, name)
        if value is not None:
            fields[name] = value
    fields["seed"] = args.seed
    config = TrainConfig.from_dict(fields)

    ckpt, log = train(config, store, corpus, vocab, (train_ids, val_ids),
                      run_dir=args.out)
    print(f"run written to {args.out}: {len(log.rows)} epochs, "
          f"best epoch {ckpt.epoch} (val BLEU-4 {ckpt.best_val_bleu4:.3f})")
    return EXIT_OK


def cmd_caption(args) -> int:
    run_dir = Path(args.run)
    ckpt_path = _require_file(run_dir / "checkpoint.ckpt", "checkpoint")
    vocab = Vocabulary.load(_require_file(run_dir / "vocab.json", "run vocabulary"))
    ckpt = load_checkpoint(ckpt_path, vocab)
    store = read_capf(_require_file(args.features, "features file"))
    image_ids = load_split(_require_file(args.split, "split file"))
    check_ids_covered(image_ids, store)

    decoded = inference.caption_images(ckpt.params, store, vocab, image_ids,
                                       ckpt.config.max_len, args.beam)
    with open(args.out, "w", encoding="utf-8") as fh:
        for image_id, cap in decoded:
            fh.write(json.dumps({"image_id": image_id,
                                 "caption": " ".join(cap.words),
                                 "log_prob": cap.log_prob}) + "\n")
    mode = "greedy" if args.beam is None else f"beam={args.beam}"
    print(f"wrote {args.out}: {len(decoded)} captions ({mode})")
    return EXIT_OK


def _load_candidates(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: bad JSON line: {exc}") from exc
            if "image_id" not in row or "caption" not in row:
                raise ParseError(f"{path}:{lineno}: need image_id and caption fields")
            if row["image_id"] in out:
                raise DataError(f"{path}:{lineno}: duplicate candidate "
                                f"for {row['image_id']!r}")
            out[row["image_id"]] = str(row["caption"])
    if not out:
        raise DataError(f"{path}: no candidate captions")
    return out


def cmd_evaluate(args) -> int:
    candidates = _load_candidates(_require_file(args.candidates, "candidates file"))
    corpus = CaptionCorpus.load(_require_file(args.captions, "captions file"))
    image_ids = load_split(_require_file(args.split, "split file"))
    check_ids_covered(image_ids, corpus.by_image, what="captions")

    cnn_name, n_params = "unknown", 0
    out_path = args.out
    if args.run:
        run_dir = Path(args.run)
        with open(_require_file(run_dir / "config.json", "run config"),
                  encoding="utf-8") as fh:
            encoder = json.load(fh).get("encoder", {})
        cnn_name = encoder.get("cnn_name", cnn_name)
        n_params = int(encoder.get("parameter_count_thousands", n_params))
        if out_path is None:
            out_path = run_dir / "report.json"
    if out_path is None:
        raise UsageError("evaluate needs --out (or --run to default into it)")

    # an empty caption (model emitted end immediately) scores as one unk token
    report = evaluate_run(
        {i: tokenize(text) or [UNK] for i, text in candidates.items()},
        corpus, image_ids, cnn_name=cnn_name,
        parameter_count_thousands=n_params,
        dataset_hash=dataset_hash(corpus, image_ids),
    )
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    print(f"wrote {out_path}: BLEU-1 {report.bleu1:.3f} BLEU-4 {report.bleu4:.3f} "
          f"ROUGE-L {report.rouge_l:.3f} CIDEr {report.cider:.3f} "
          f"({report.n_instances} images)")
    return EXIT_OK


def _load_run_record(run_dir) -> dict:
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise DataError(f"run directory not found: {run_dir}")
    missing = [f for f in RUN_FILES if not (run_dir / f).is_file()]
    if missing:
        raise DataError(f"{run_dir} is not a complete run: missing {missing}")
    with open(run_dir / "config.json", encoding="utf-8") as fh:
        config = json.load(fh)
    with open(run_dir / "report.json", encoding="utf-8") as fh:
        report = MetricReport.from_dict(json.load(fh))
    return {"dir": run_dir, "variant": config["config"]["variant"], "report": report}


_TABLE_COLS = ("CNN", "Parameters (thousands)", "BLEU-1", "BLEU-2", "BLEU-3",
               "BLEU-4", "ROUGE-L", "CIDEr")


def cmd_compare(args) -> int:
    records = [_load_run_record(d) for d in args.runs]
    hashes = {r["report"].dataset_hash for r in records}
    if len(hashes) > 1:
        raise DataError("runs were evaluated on different data (dataset_hash "
                        "differs); refusing to compare")
    records.sort(key=lambda r: (r["report"].parameter_count_thousands,
                                r["report"].cnn_name))

    md = ["# Encoder comparison", ""]
    for variant in ("baseline", "attention"):
        rows = [r for r in records if r["variant"] == variant]
        if not rows:
            continue
        md += [f"## {variant} decoder", "",
               "| " + " | ".join(_TABLE_COLS) + " |",
               "|" + "---|" * len(_TABLE_COLS)]
        for r in rows:
            rep = r["report"]
            md.append("| {} | {} | {:.1f} | {:.1f} | {:.1f} | {:.1f} | {:.1f} | {:.1f} |"
                      .format(rep.cnn_name, rep.parameter_count_thousands,
                              rep.bleu1, rep.bleu2, rep.bleu3, rep.bleu4,
                              rep.rouge_l, rep.cider))
        md.append("")
    out_md = Path(args.out)
    out_md.write_text("\n".join(md), encoding="utf-8")

    out_csv = out_md.with_suffix(".csv")
    lines = ["cnn_name,parameters_thousands,bleu1,bleu2,bleu3,bleu4,rouge_l,cider,variant"]
    for r in records:
        rep = r["report"]
        lines.append(",".join([
            rep.cnn_name, str(rep.parameter_count_thousands),
            repr(rep.bleu1), repr(rep.bleu2), repr(rep.bleu3), repr(rep.bleu4),
            repr(rep.rouge_l), repr(rep.cider), r["variant"],
        ]))
    out_csv.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {out_md} and {out_csv}: {len(records)} runs")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="caplab",
        description="Train and evaluate LSTM caption decoders over "
                    "pre-extracted CNN features.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="build a vocabulary JSON from captions")
    p.add_argument("--captions", required=True)
    p.add_argument("--split", default=None,
                   help="optional split file restricting which images count")
    p.add_argument("--min-freq", type=int, default=5, dest="min_freq")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="train a decoder and write a run directory")
    p.add_argument("--features", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--captions", required=True)
    p.add_argument("--split-train", required=True, dest="split_train")
    p.add_argument("--split-val", required=True, dest="split_val")
    p.add_argument("--variant", choices=("baseline", "attention"), default=None)
    p.add_argument("--config", default=None, help="JSON file of config fields")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="run directory to create")
    for name, typ in _CONFIG_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), type=typ, default=None,
                       dest=name)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("caption", help="decode captions for a split")
    p.add_argument("--run", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--beam", type=int, nargs="?", const=3, default=None,
                   help="beam width (default greedy; bare --beam means 3)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("evaluate", help="score candidate captions")
    p.add_argument("--candidates", required=True)
    p.add_argument("--captions", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--run", default=None,
                   help="run directory supplying encoder metadata; also the "
                        "default home of report.json")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="tabulate reports from several runs")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", required=True, help="markdown path; CSV lands beside it")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CaplabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
