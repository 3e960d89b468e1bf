"""Fold construction, train/test splitting, and dynamic-padding collation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .annotations import IGNORE_ID, AlignedExample


@dataclass(frozen=True)
class Fold:
    fold_index: int
    train_indices: tuple[int, ...]
    val_indices: tuple[int, ...]


@dataclass(frozen=True)
class Batch:
    """One padded batch; rows are padded to the batch max, not a global max."""

    ids: np.ndarray            # int64 [batch, max_in_batch]
    labels: np.ndarray         # int64, pad = IGNORE_ID
    attention_mask: np.ndarray  # int64, 0 exactly at pad positions
    lengths: tuple[int, ...]
    doc_ids: tuple[str, ...]


def kfold(n: int, k: int, seed: int = 0) -> list[Fold]:
    """Shuffled partition into k validation blocks with sizes within 1."""
    if not 2 <= k <= n:
        raise ValueError(f"k must satisfy 2 <= k <= n, got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    blocks = np.array_split(perm, k)
    folds: list[Fold] = []
    for i, block in enumerate(blocks):
        val = set(int(v) for v in block)
        train = tuple(idx for idx in range(n) if idx not in val)
        folds.append(Fold(fold_index=i, train_indices=train, val_indices=tuple(sorted(val))))
    return folds


def train_test_split(n: int, test_fraction: float, seed: int = 0) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Disjoint cover with |test| = ceil(test_fraction * n), deterministic per seed."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    n_test = math.ceil(test_fraction * n)
    perm = np.random.default_rng(seed).permutation(n)
    test = tuple(sorted(int(v) for v in perm[:n_test]))
    train = tuple(sorted(int(v) for v in perm[n_test:]))
    return train, test


def collate(
    examples: Sequence[AlignedExample],
    batch_size: int = 16,
    pad_id: int = 0,
) -> list[Batch]:
    """Group consecutive examples and pad each batch to its own longest row."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    batches: list[Batch] = []
    for start in range(0, len(examples), batch_size):
        group = examples[start : start + batch_size]
        width = max(len(ex.ids) for ex in group)
        ids = np.full((len(group), width), pad_id, dtype=np.int64)
        labels = np.full((len(group), width), IGNORE_ID, dtype=np.int64)
        mask = np.zeros((len(group), width), dtype=np.int64)
        for row, ex in enumerate(group):
            n = len(ex.ids)
            ids[row, :n] = ex.ids
            labels[row, :n] = ex.labels
            mask[row, :n] = ex.attention_mask
        batches.append(
            Batch(
                ids=ids,
                labels=labels,
                attention_mask=mask,
                lengths=tuple(len(ex.ids) for ex in group),
                doc_ids=tuple(ex.doc_id for ex in group),
            )
        )
    return batches


def uncollate(batches: Sequence[Batch]) -> list[AlignedExample]:
    """Invert :func:`collate` using the stored row lengths."""
    examples: list[AlignedExample] = []
    for batch in batches:
        for row, n in enumerate(batch.lengths):
            examples.append(
                AlignedExample(
                    doc_id=batch.doc_ids[row],
                    ids=tuple(int(v) for v in batch.ids[row, :n]),
                    labels=tuple(int(v) for v in batch.labels[row, :n]),
                    attention_mask=tuple(int(v) for v in batch.attention_mask[row, :n]),
                )
            )
    return examples
