"""Command-line entry point: one subcommand per pipeline stage plus ``run``.

Exit codes: 0 ok, 1 stage/runtime error, 2 config or usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import report as report_mod
from .annotations import align, parse_annotations, validate_annotation_rules, write_aligned
from .curation import curate_tokens, extract_vocab_candidates, load_candidates, write_candidates
from .evaluation import average_folds, extract_entities, prf1
from .fileio import read_jsonl
from .ingest import EndpointConfig, fetch_recalls, filter_records, load_fixture, write_records
from .inference import predict, threshold_predictions, threshold_report
from .model import load_checkpoint
from .pipeline import ConfigError, StageError, load_config, run_pipeline, validate_config
from .tokenizer import enrich, load_vocab, save_vocab, tokenization_diff, tokenize

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_STAGE_ERROR = 1
EXIT_CONFIG_ERROR = 2


def _read_texts(value: str) -> list[str]:
    """Interpret --text as a literal string, or as a file with one text per line."""
    path = Path(value)
    if path.exists():
        return [line for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    return [value]


def _cmd_ingest(args: argparse.Namespace) -> int:
    if args.source == "fixture":
        if not args.fixture:
            print("ingest: --fixture is required with --source fixture", file=sys.stderr)
            return EXIT_CONFIG_ERROR
        records = load_fixture(args.fixture)
        if args.max is not None:
            records = records[: args.max]
        source = "fixture"
    else:
        config = EndpointConfig(
            url=args.endpoint,
            page_size=args.page_size,
            cache_dir=args.cache_dir,
        )
        records = fetch_recalls(config, max_records=args.max if args.max is not None else 1000)
        source = "live-api"
    if args.filter:
        records = filter_records(records)
    manifest = write_records(args.out, records, source=source)
    print(f"wrote {manifest.record_count} records to {args.out} (digest {manifest.content_digest[:12]})")
    return EXIT_OK


def _cmd_curate(args: argparse.Namespace) -> int:
    records = load_fixture(args.infile)
    classification = load_fixture(args.classification) if args.classification else []
    raw = extract_vocab_candidates(records, classification)
    candidates = curate_tokens(raw, seed=args.seed)
    write_candidates(candidates, args.out)
    print(f"curated {len(candidates.tokens)} candidates from {len(raw)} raw tokens -> {args.out}")
    return EXIT_OK


def _cmd_enrich(args: argparse.Namespace) -> int:
    vocab = load_vocab(args.base)
    candidates = load_candidates(args.candidates)
    enriched = enrich(vocab, candidates, args.fraction, strategy=args.strategy, seed=args.seed)
    save_vocab(enriched, args.out)
    print(f"vocabulary {len(vocab)} -> {len(enriched)} tokens ({len(enriched) - len(vocab)} added)")
    return EXIT_OK


def _cmd_tokenize(args: argparse.Namespace) -> int:
    vocab = load_vocab(args.vocab)
    for text in _read_texts(args.text):
        tok = tokenize(text, vocab, max_len=args.max_len)
        if args.ids:
            print(json.dumps({"tokens": list(tok.tokens), "ids": list(tok.ids)}))
        else:
            print(" ".join(tok.tokens))
    return EXIT_OK


def _cmd_diff(args: argparse.Namespace) -> int:
    vocab_a = load_vocab(args.vocab_a)
    vocab_b = load_vocab(args.vocab_b)
    corpus = _read_texts(args.corpus)
    diff = tokenization_diff(corpus, vocab_a, vocab_b)
    print(json.dumps(diff.to_json_dict(), indent=2))
    return EXIT_OK


def _cmd_align(args: argparse.Namespace) -> int:
    vocab = load_vocab(args.vocab)
    docs = parse_annotations(args.annotations)
    warnings = [w for doc in docs for w in validate_annotation_rules(doc)]
    for warning in warnings:
        log.warning("%s", warning)
    examples = [align(doc, tokenize(doc.text, vocab, max_len=args.max_len)) for doc in docs]
    write_aligned(args.out, examples)
    print(f"aligned {len(examples)} docs ({len(warnings)} rule warnings) -> {args.out}")
    return EXIT_OK


def _cmd_train(args: argparse.Namespace) -> int:
    from .annotations import load_aligned
    from .model import ModelConfig, save_checkpoint
    from .optim import HyperParams
    from .training import run_training

    examples = load_aligned(args.data)
    vocab = load_vocab(args.vocab)
    model_section = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    optimizer_section = model_section.pop("optimizer", {})
    model_section.pop("vocab_size", None)
    config = ModelConfig(vocab_size=len(vocab), seed=args.seed, **model_section)
    hyper = HyperParams(**optimizer_section)

    result = run_training(
        examples,
        config,
        hyper,
        k=args.k,
        epochs=args.epochs,
        batch_size=args.batch_size,
        pad_id=vocab.pad_id,
        seed=args.seed,
        use_kfold=not args.single_split,
        test_fraction=args.test_fraction,
    )

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for fold in result.folds:
        save_checkpoint(out_dir / f"ckpt-fold{fold.fold_index}.bin", fold.params, seed=args.seed, step=len(fold.loss_history))
    report_mod.save_loss_figure([f.loss_history for f in result.folds], out_dir / "loss.png")
    (out_dir / "metrics.json").write_text(
        json.dumps(
            {
                "averaged": result.averaged.to_json_dict(),
                "folds": [
                    {"fold_index": f.fold_index, "best_epoch": f.best_epoch, "report": f.best_report.to_json_dict()}
                    for f in result.folds
                ],
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    print(f"averaged F1 {result.averaged.f1:.2f} over {len(result.folds)} fold(s) -> {out_dir}")
    return EXIT_OK


def _load_label_file(path: str) -> dict[str, list[str]]:
    """JSONL of {doc_id, labels: [...]} -> doc_id -> word-level label strings."""
    sequences: dict[str, list[str]] = {}
    for lineno, obj in read_jsonl(path):
        sequences[str(obj.get("doc_id", f"doc-{lineno}"))] = [str(lab) for lab in obj["labels"]]
    return sequences


def _cmd_eval(args: argparse.Namespace) -> int:
    pred = _load_label_file(args.pred)
    gold = _load_label_file(args.gold)
    pred_spans = [span for doc_id, labels in sorted(pred.items()) for span in extract_entities(labels, doc_id)]
    gold_spans = [span for doc_id, labels in sorted(gold.items()) for span in extract_entities(labels, doc_id)]
    metrics = prf1(pred_spans, gold_spans)
    rows = [report_mod.ResultRow(model=args.name, report=metrics)]

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report_mod.write_json(rows, out)
    report_mod.write_table(rows, out.with_suffix(".txt"))
    report_mod.write_csv(rows, out.with_suffix(".csv"))
    report_mod.save_metrics_figure(rows, out.with_suffix(".png"))
    print(report_mod.render_table(rows), end="")
    return EXIT_OK


def _cmd_infer(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.ckpt)
    vocab = load_vocab(args.vocab)
    for text in _read_texts(args.text):
        preds = predict(ckpt.params, vocab, text)
        if args.json:
            kept = threshold_predictions(preds, args.threshold)
            print(json.dumps([p.to_json_dict() for p in kept]))
        else:
            for line in threshold_report(preds, args.threshold):
                print(line)
    return EXIT_OK


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    errors = validate_config(config)
    if errors:
        for error in errors:
            print(f"config error: {error}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    if args.validate_only:
        print("config ok")
        return EXIT_OK
    out_dir = args.out_dir or config.get("out_dir", "run")
    try:
        result = run_pipeline(config, out_dir, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except StageError as exc:
        print(f"{exc}", file=sys.stderr)
        return EXIT_STAGE_ERROR
    if result.rows:
        print(report_mod.render_table(list(result.rows)), end="")
    print(f"run artifacts in {result.run_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recallner", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="fetch or load recall records")
    p.add_argument("--source", choices=["live", "fixture"], required=True)
    p.add_argument("--fixture", help="fixture path (line-delimited JSON)")
    p.add_argument("--endpoint", default=EndpointConfig().url)
    p.add_argument("--page-size", type=int, default=100)
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--max", type=int, default=None, help="maximum records to keep")
    p.add_argument("--filter", action="store_true", help="also dedup and drop empty recall texts")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("curate", help="build the vocabulary candidate list")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--classification", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_curate)

    p = sub.add_parser("enrich", help="append candidates to a vocabulary")
    p.add_argument("--base", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--strategy", default="shuffle", choices=["shuffle", "fifo", "length_desc"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_enrich)

    p = sub.add_parser("tokenize", help="tokenize text with a vocabulary")
    p.add_argument("--vocab", required=True)
    p.add_argument("--text", required=True, help="literal text or a file with one text per line")
    p.add_argument("--max-len", type=int, default=512)
    p.add_argument("--ids", action="store_true", help="emit JSON with token ids")
    p.set_defaults(func=_cmd_tokenize)

    p = sub.add_parser("diff", help="compare tokenization under two vocabularies")
    p.add_argument("--vocab-a", dest="vocab_a", required=True)
    p.add_argument("--vocab-b", dest="vocab_b", required=True)
    p.add_argument("--corpus", required=True, help="literal text or file with one text per line")
    p.set_defaults(func=_cmd_diff)

    p = sub.add_parser("align", help="align span annotations to subword labels")
    p.add_argument("--annotations", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--max-len", type=int, default=512)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_align)

    p = sub.add_parser("train", help="train with k-fold cross-validation")
    p.add_argument("--data", required=True, help="aligned examples (JSONL)")
    p.add_argument("--vocab", required=True)
    p.add_argument("--config", default=None, help="model config JSON (may embed an 'optimizer' section)")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--single-split", action="store_true", help="train/test split instead of k-fold")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="entity-level scoring of predictions against gold")
    p.add_argument("--pred", required=True, help="JSONL of {doc_id, labels}")
    p.add_argument("--gold", required=True, help="JSONL of {doc_id, labels}")
    p.add_argument("--name", default="model")
    p.add_argument("--out", default="report.json")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("infer", help="thresholded token predictions for raw text")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--threshold", type=float, default=0.99)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("run", help="run the configured pipeline end to end")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--validate-only", action="store_true", help="lint the config and exit")
    p.set_defaults(func=_cmd_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE_ERROR
    except Exception as exc:  # pragma: no cover - defensive
        log.exception("unhandled error")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
