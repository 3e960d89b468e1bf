"""Fold-based training harness with per-epoch validation.

Each fold trains a fresh model; batches are rebuilt from a seeded shuffle
every epoch. Validation scores entity-level F1 from first-subword label
reads, and the best epoch across the run is reported per fold.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .annotations import DEFAULT_SCHEME, AlignedExample, LabelScheme
from .dataset import Fold, collate, kfold, train_test_split
from .evaluation import MetricsReport, average_folds, extract_entities, prf1
from .model import ModelConfig, Parameters, backward, forward, init_params, masked_cross_entropy
from .optim import HyperParams, OptimizerState, adamw_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_loss: float
    report: MetricsReport


@dataclass(frozen=True)
class FoldResult:
    fold_index: int
    best_epoch: int
    best_report: MetricsReport
    loss_history: tuple[float, ...]  # one entry per optimizer step
    epoch_stats: tuple[EpochStats, ...]
    params: Parameters


@dataclass(frozen=True)
class TrainingResult:
    folds: tuple[FoldResult, ...]
    averaged: MetricsReport


def _step_seed(seed: int, fold: int, epoch: int, step: int) -> int:
    return (seed * 1_000_003 + fold * 10_007 + epoch * 101 + step) % 2**31


def predict_word_labels(
    params: Parameters,
    examples: Sequence[AlignedExample],
    batch_size: int = 16,
    pad_id: int = 0,
    scheme: LabelScheme = DEFAULT_SCHEME,
) -> list[list[str]]:
    """Predicted word-level labels per example, read at first-subword positions."""
    predictions: list[list[str]] = []
    for batch in collate(examples, batch_size=batch_size, pad_id=pad_id):
        logits, _ = forward(params, batch.ids, batch.attention_mask, train=False)
        picks = logits.argmax(-1)
        for row, n in enumerate(batch.lengths):
            labels = batch.labels[row, :n]
            word_positions = np.nonzero(labels != scheme.ignore_id)[0]
            predictions.append([scheme.id_to_label[int(picks[row, pos])] for pos in word_positions])
    return predictions


def evaluate_examples(
    params: Parameters,
    examples: Sequence[AlignedExample],
    batch_size: int = 16,
    pad_id: int = 0,
    scheme: LabelScheme = DEFAULT_SCHEME,
) -> MetricsReport:
    """Entity-level scoring of predictions against the examples' own labels."""
    predicted = predict_word_labels(params, examples, batch_size=batch_size, pad_id=pad_id, scheme=scheme)
    pred_spans = []
    gold_spans = []
    for ex, pred_labels in zip(examples, predicted):
        gold_labels = [scheme.id_to_label[lab] for lab in ex.labels if lab != scheme.ignore_id]
        pred_spans.extend(extract_entities(pred_labels, doc_id=ex.doc_id))
        gold_spans.extend(extract_entities(gold_labels, doc_id=ex.doc_id))
    return prf1(pred_spans, gold_spans)


def train_fold(
    examples: Sequence[AlignedExample],
    fold: Fold,
    config: ModelConfig,
    hyper: HyperParams,
    epochs: int = 10,
    batch_size: int = 16,
    pad_id: int = 0,
    seed: int = 0,
    scheme: LabelScheme = DEFAULT_SCHEME,
) -> FoldResult:
    """Train one fold from scratch; report the best validation epoch."""
    params = init_params(config)
    state = OptimizerState.zeros_like(params.tensors())
    train_examples = [examples[i] for i in fold.train_indices]
    val_examples = [examples[i] for i in fold.val_indices]

    losses: list[float] = []
    stats: list[EpochStats] = []
    for epoch in range(epochs):
        order = np.random.default_rng(_step_seed(seed, fold.fold_index, epoch, 0)).permutation(
            len(train_examples)
        )
        shuffled = [train_examples[i] for i in order]
        epoch_losses: list[float] = []
        for step, batch in enumerate(collate(shuffled, batch_size=batch_size, pad_id=pad_id)):
            logits, cache = forward(
                params,
                batch.ids,
                batch.attention_mask,
                train=True,
                dropout_seed=_step_seed(seed, fold.fold_index, epoch, step + 1),
            )
            loss, dlogits = masked_cross_entropy(logits, batch.labels)
            grads = backward(params, cache, dlogits)
            tensors, state = adamw_step(params.tensors(), grads, state, hyper)
            params = params.with_tensors(tensors)
            epoch_losses.append(loss)
        losses.extend(epoch_losses)
        report = evaluate_examples(params, val_examples, batch_size=batch_size, pad_id=pad_id, scheme=scheme)
        stats.append(EpochStats(epoch=epoch, mean_loss=float(np.mean(epoch_losses)), report=report))
        log.debug(
            "fold %d epoch %d loss %.4f val F1 %.2f",
            fold.fold_index,
            epoch,
            stats[-1].mean_loss,
            report.f1,
        )

    best = max(stats, key=lambda s: (s.report.f1, -s.epoch))
    return FoldResult(
        fold_index=fold.fold_index,
        best_epoch=best.epoch,
        best_report=best.report,
        loss_history=tuple(losses),
        epoch_stats=tuple(stats),
        params=params,
    )


def run_training(
    examples: Sequence[AlignedExample],
    config: ModelConfig,
    hyper: HyperParams,
    k: int = 5,
    epochs: int = 10,
    batch_size: int = 16,
    pad_id: int = 0,
    seed: int = 0,
    use_kfold: bool = True,
    test_fraction: float = 0.2,
    scheme: LabelScheme = DEFAULT_SCHEME,
) -> TrainingResult:
    """K-fold cross-validated training, or a single train/test split."""
    n = len(examples)
    if use_kfold:
        folds = kfold(n, k, seed=seed)
    else:
        train_idx, test_idx = train_test_split(n, test_fraction, seed=seed)
        folds = [Fold(fold_index=0, train_indices=train_idx, val_indices=test_idx)]
    results = [
        train_fold(
            examples,
            fold,
            config,
            hyper,
            epochs=epochs,
            batch_size=batch_size,
            pad_id=pad_id,
            seed=seed,
            scheme=scheme,
        )
        for fold in folds
    ]
    return TrainingResult(
        folds=tuple(results),
        averaged=average_folds([r.best_report for r in results]),
    )
