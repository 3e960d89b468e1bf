"""Config-driven pipeline: ingest, curate, annotate, experiment matrix, report.

The run directory holds every intermediate artifact, and each stage reads
only the previous stage's persisted artifact, so partial reruns work by
declaring a subset of stages against an existing run directory. The final
manifest lists every artifact with its content digest; identical config and
seeds reproduce identical manifests apart from the timestamp.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from . import report as report_mod
from .annotations import align, load_aligned, parse_annotations, validate_annotation_rules, write_aligned
from .curation import (
    ORDER_STRATEGIES,
    curate_tokens,
    extract_vocab_candidates,
    load_candidates,
    write_candidates,
)
from .evaluation import MetricsReport
from .fileio import sha256_bytes, sha256_file, write_jsonl
from .ingest import filter_records, load_fixture, write_records
from .inference import predict, threshold_report
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .optim import HyperParams
from .tokenizer import Vocabulary, enrich, load_vocab, save_vocab, tokenize
from .training import run_training

log = logging.getLogger(__name__)

ENRICH_FRACTIONS = (0.0, 0.25, 0.5, 1.0)
ALL_STAGES = ("ingest", "curate", "annotate", "experiments", "report", "infer")
DEFAULT_STAGES = ("ingest", "curate", "annotate", "experiments", "report")


class ConfigError(Exception):
    """The pipeline config failed validation."""


class StageError(Exception):
    """A pipeline stage failed; partial artifacts stay on disk."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    enrich_fraction: float
    kfold: bool
    dropout: bool
    seed: int


@dataclass(frozen=True)
class RunResult:
    run_dir: Path
    rows: tuple[report_mod.ResultRow, ...]
    manifest: dict


def load_config(path: str | Path) -> dict:
    path = Path(path)
    config = json.loads(path.read_text(encoding="utf-8"))
    config.setdefault("_base_dir", str(path.parent))
    return config


def _resolve(config: dict, value: str) -> Path:
    base = Path(config.get("_base_dir", "."))
    path = Path(value)
    return path if path.is_absolute() else base / path


def validate_config(config: dict) -> list[str]:
    """Lint the config; returns error strings naming the offending fields."""
    errors: list[str] = []

    def check_section(name: str, builder, payload: dict) -> None:
        try:
            builder(**payload)
        except (TypeError, ValueError) as exc:
            errors.append(f"{name}: {exc}")

    if not isinstance(config.get("seed", 0), int):
        errors.append("seed: must be an integer")

    stages = config.get("stages", list(DEFAULT_STAGES))
    if not isinstance(stages, list) or any(s not in ALL_STAGES for s in stages):
        errors.append(f"stages: entries must come from {ALL_STAGES}")
        stages = []

    inputs = config.get("inputs", {})
    required_inputs = {
        "ingest": ["records"],
        "annotate": ["annotations"],
        "experiments": ["base_vocab"],
    }
    for stage, fields in required_inputs.items():
        if stage not in stages:
            continue
        for fname in fields:
            value = inputs.get(fname)
            if not value:
                errors.append(f"inputs.{fname}: required by stage {stage!r} but missing")
            elif not _resolve(config, value).exists():
                errors.append(f"inputs.{fname}: file not found: {_resolve(config, value)}")
    cls_path = inputs.get("classification_records")
    if cls_path and not _resolve(config, cls_path).exists():
        errors.append(f"inputs.classification_records: file not found: {_resolve(config, cls_path)}")

    strategy = config.get("curation", {}).get("strategy", "shuffle")
    if strategy not in ORDER_STRATEGIES:
        errors.append(f"curation.strategy: must be one of {ORDER_STRATEGIES}")

    max_len = config.get("tokenizer", {}).get("max_len", 512)
    if not isinstance(max_len, int) or max_len < 2:
        errors.append("tokenizer.max_len: must be an integer >= 2")

    model = dict(config.get("model", {}))
    model.pop("vocab_size", None)
    check_section("model", lambda **kw: ModelConfig(vocab_size=8, **kw), model)
    check_section("optimizer", HyperParams, config.get("optimizer", {}))

    training = config.get("training", {})
    if training.get("k", 5) < 2:
        errors.append("training.k: must be >= 2")
    if training.get("epochs", 10) < 1:
        errors.append("training.epochs: must be >= 1")
    if training.get("batch_size", 16) < 1:
        errors.append("training.batch_size: must be >= 1")
    if not 0 < training.get("test_fraction", 0.2) < 1:
        errors.append("training.test_fraction: must be in (0, 1)")

    names: set[str] = set()
    for i, exp in enumerate(config.get("experiments", [])):
        prefix = f"experiments[{i}]"
        name = exp.get("name")
        if not name:
            errors.append(f"{prefix}.name: required")
        elif name in names:
            errors.append(f"{prefix}.name: duplicate name {name!r}")
        else:
            names.add(name)
        fraction = exp.get("enrich_fraction", 0.0)
        if fraction not in ENRICH_FRACTIONS:
            errors.append(f"{prefix}.enrich_fraction: must be one of {ENRICH_FRACTIONS}, got {fraction}")
        reg = exp.get("regularization", {})
        for key in ("kfold", "dropout"):
            if key in reg and not isinstance(reg[key], bool):
                errors.append(f"{prefix}.regularization.{key}: must be a boolean")

    if "infer" in stages:
        texts = config.get("inference", {}).get("texts")
        if not texts or not all(isinstance(t, str) and t for t in texts):
            errors.append("inference.texts: stage 'infer' needs a non-empty list of strings")
        threshold = config.get("inference", {}).get("threshold", 0.99)
        if not 0 <= threshold <= 1:
            errors.append("inference.threshold: must be in [0, 1]")

    return errors


def _experiment_specs(config: dict) -> list[ExperimentSpec]:
    run_seed = config.get("seed", 0)
    specs = []
    for exp in config.get("experiments", []):
        reg = exp.get("regularization", {})
        specs.append(
            ExperimentSpec(
                name=exp["name"],
                enrich_fraction=float(exp.get("enrich_fraction", 0.0)),
                kfold=bool(reg.get("kfold", True)),
                dropout=bool(reg.get("dropout", True)),
                seed=int(exp.get("seed", run_seed)),
            )
        )
    return specs


# ---------------------------------------------------------------------------
# stages — each reads the previous stage's persisted artifact
# ---------------------------------------------------------------------------


def _stage_ingest(config: dict, run_dir: Path) -> None:
    records = load_fixture(_resolve(config, config["inputs"]["records"]))
    filtered = filter_records(records)
    write_records(run_dir / "records.jsonl", filtered, source="fixture")
    log.info("ingest: %d records (%d after filtering)", len(records), len(filtered))


def _stage_curate(config: dict, run_dir: Path) -> None:
    records = load_fixture(run_dir / "records.jsonl")
    cls_path = config.get("inputs", {}).get("classification_records")
    classification = load_fixture(_resolve(config, cls_path)) if cls_path else []
    raw = extract_vocab_candidates(records, classification)
    candidates = curate_tokens(raw, seed=config.get("seed", 0))
    write_candidates(candidates, run_dir / "candidates.txt")
    log.info("curate: %d raw tokens -> %d candidates", len(raw), len(candidates.tokens))


def _stage_annotate(config: dict, run_dir: Path) -> None:
    docs = parse_annotations(_resolve(config, config["inputs"]["annotations"]))
    warnings: list[str] = []
    for doc in docs:
        warnings.extend(validate_annotation_rules(doc))
    (run_dir / "warnings.txt").write_text("".join(f"{w}\n" for w in warnings), encoding="utf-8")
    write_jsonl(
        run_dir / "annotations.jsonl",
        (
            {"doc_id": d.doc_id, "text": d.text, "label": [[s.start, s.end, s.label] for s in d.spans]}
            for d in docs
        ),
    )
    log.info("annotate: %d docs, %d rule warnings", len(docs), len(warnings))


def _experiment_vocab(config: dict, run_dir: Path, spec: ExperimentSpec) -> Vocabulary:
    base = load_vocab(_resolve(config, config["inputs"]["base_vocab"]))
    if spec.enrich_fraction == 0.0:
        return base
    candidates = load_candidates(run_dir / "candidates.txt")
    strategy = config.get("curation", {}).get("strategy", "shuffle")
    return enrich(base, candidates, spec.enrich_fraction, strategy=strategy, seed=spec.seed)


def _stage_experiments(config: dict, run_dir: Path) -> None:
    docs = parse_annotations(run_dir / "annotations.jsonl")
    max_len = config.get("tokenizer", {}).get("max_len", 512)
    training_cfg = config.get("training", {})
    hyper = HyperParams(**config.get("optimizer", {}))
    model_section = dict(config.get("model", {}))
    model_section.pop("vocab_size", None)
    model_section.pop("seed", None)

    for spec in _experiment_specs(config):
        vocab = _experiment_vocab(config, run_dir, spec)
        save_vocab(vocab, run_dir / f"vocab-{spec.name}.txt")

        examples = [align(doc, tokenize(doc.text, vocab, max_len=max_len)) for doc in docs]
        write_aligned(run_dir / f"aligned-{spec.name}.jsonl", examples)

        dropout = model_section.get("dropout_rate", 0.1) if spec.dropout else 0.0
        model_config = ModelConfig(
            vocab_size=len(vocab),
            **{**model_section, "dropout_rate": dropout},
            seed=spec.seed,
        )
        result = run_training(
            examples,
            model_config,
            hyper,
            k=training_cfg.get("k", 5),
            epochs=training_cfg.get("epochs", 10),
            batch_size=training_cfg.get("batch_size", 16),
            pad_id=vocab.pad_id,
            seed=spec.seed,
            use_kfold=spec.kfold,
            test_fraction=training_cfg.get("test_fraction", 0.2),
        )

        for fold in result.folds:
            save_checkpoint(
                run_dir / f"ckpt-{spec.name}-fold{fold.fold_index}.bin",
                fold.params,
                seed=spec.seed,
                step=len(fold.loss_history),
            )
        report_mod.save_loss_figure([f.loss_history for f in result.folds], run_dir / f"loss-{spec.name}.png")

        best_fold = max(result.folds, key=lambda f: f.best_report.f1)
        metrics = {
            "experiment": spec.name,
            "enrich_fraction": spec.enrich_fraction,
            "regularization": {"kfold": spec.kfold, "dropout": spec.dropout},
            "seed": spec.seed,
            "vocab_size": len(vocab),
            "best_fold": best_fold.fold_index,
            "averaged": result.averaged.to_json_dict(),
            "folds": [
                {
                    "fold_index": f.fold_index,
                    "best_epoch": f.best_epoch,
                    "report": f.best_report.to_json_dict(),
                }
                for f in result.folds
            ],
        }
        (run_dir / f"metrics-{spec.name}.json").write_text(
            json.dumps(metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        log.info("experiment %s: averaged F1 %.2f", spec.name, result.averaged.f1)


def _load_experiment_rows(config: dict, run_dir: Path) -> list[report_mod.ResultRow]:
    rows = []
    for spec in _experiment_specs(config):
        metrics = json.loads((run_dir / f"metrics-{spec.name}.json").read_text(encoding="utf-8"))
        avg = metrics["averaged"]
        rows.append(
            report_mod.ResultRow(
                model=spec.name,
                report=MetricsReport(
                    tp=avg["tp"],
                    fp=avg["fp"],
                    fn=avg["fn"],
                    precision=avg["precision"],
                    recall=avg["recall"],
                    f1=avg["f1"],
                    averaged=avg["averaged"],
                ),
            )
        )
    return rows


def _stage_report(config: dict, run_dir: Path) -> None:
    rows = _load_experiment_rows(config, run_dir)
    report_mod.write_table(rows, run_dir / "comparison.txt")
    report_mod.write_csv(rows, run_dir / "comparison.csv")
    report_mod.write_json(rows, run_dir / "comparison.json")
    if rows:
        report_mod.save_metrics_figure(rows, run_dir / "comparison.png")


def _stage_infer(config: dict, run_dir: Path) -> None:
    inference_cfg = config.get("inference", {})
    texts = inference_cfg["texts"]
    threshold = inference_cfg.get("threshold", 0.99)
    for spec in _experiment_specs(config):
        metrics = json.loads((run_dir / f"metrics-{spec.name}.json").read_text(encoding="utf-8"))
        vocab = load_vocab(run_dir / f"vocab-{spec.name}.txt")
        ckpt = load_checkpoint(run_dir / f"ckpt-{spec.name}-fold{metrics['best_fold']}.bin")
        lines: list[str] = []
        for text in texts:
            preds = predict(ckpt.params, vocab, text)
            lines.append(f"# {text}")
            lines.extend(threshold_report(preds, threshold))
            lines.append("")
        (run_dir / f"inference-{spec.name}.txt").write_text(
            "".join(f"{line}\n" for line in lines), encoding="utf-8"
        )


_STAGE_FUNCS = {
    "ingest": _stage_ingest,
    "curate": _stage_curate,
    "annotate": _stage_annotate,
    "experiments": _stage_experiments,
    "report": _stage_report,
    "infer": _stage_infer,
}


def run_pipeline(config: dict, out_dir: str | Path, seed: int | None = None) -> RunResult:
    """Execute the declared stages in order; raises StageError on failure."""
    errors = validate_config(config)
    if errors:
        raise ConfigError("; ".join(errors))
    config = dict(config)
    if seed is not None:
        config["seed"] = seed

    run_dir = Path(out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    stages = config.get("stages", list(DEFAULT_STAGES))

    for stage in stages:
        log.info("stage: %s", stage)
        try:
            _STAGE_FUNCS[stage](config, run_dir)
        except Exception as exc:
            raise StageError(stage, exc) from exc

    rows = _load_experiment_rows(config, run_dir) if "report" in stages or "experiments" in stages else []
    manifest = _write_manifest(config, run_dir)
    return RunResult(run_dir=run_dir, rows=tuple(rows), manifest=manifest)


def _write_manifest(config: dict, run_dir: Path) -> dict:
    public_config = {k: v for k, v in config.items() if not k.startswith("_")}
    artifacts = {}
    for path in sorted(run_dir.rglob("*")):
        # *.manifest.json sidecars carry fetch timestamps; list them undigested
        # so reruns with identical config and seeds produce identical manifests.
        if not path.is_file() or path.name == "manifest.json":
            continue
        if path.name.endswith(".manifest.json"):
            artifacts[str(path.relative_to(run_dir))] = None
        else:
            artifacts[str(path.relative_to(run_dir))] = sha256_file(path)
    manifest = {
        "config_digest": sha256_bytes(json.dumps(public_config, sort_keys=True).encode("utf-8")),
        "seed": config.get("seed", 0),
        "created_at": datetime.now(timezone.utc).isoformat(),
        "artifacts": artifacts,
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest
