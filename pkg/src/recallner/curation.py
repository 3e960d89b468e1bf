"""Produce the device-vocabulary candidate list and the annotation sample.

Cleaning keeps interior hyphens and slashes so part numbers like
"XRA29-908-28" survive; only leading/trailing punctuation is stripped.
Dedup is case-sensitive because the downstream tokenizer is cased.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .ingest import RecallRecord
from .tokenizer import is_punctuation

_DIGITS_ONLY = re.compile(r"[0-9]+")

ORDER_STRATEGIES = ("shuffle", "fifo", "length_desc")


@dataclass(frozen=True)
class VocabCandidateSet:
    """Deduplicated, cleaned candidate tokens in a deterministic order."""

    tokens: tuple[str, ...]
    provenance_counts: dict
    seed: int


def _split_field(text: str) -> list[str]:
    """Whitespace split, then peel leading/trailing punctuation into own tokens."""
    out: list[str] = []
    for chunk in text.split():
        start, end = 0, len(chunk)
        while start < end and is_punctuation(chunk[start]):
            start += 1
        while end > start and is_punctuation(chunk[end - 1]):
            end -= 1
        out.extend(chunk[:start])
        if start < end:
            out.append(chunk[start:end])
        out.extend(chunk[end:])
    return out


def extract_vocab_candidates(
    records: Sequence[RecallRecord],
    classification_records: Sequence[RecallRecord] = (),
) -> list[str]:
    """Word-tokenize device_name and product_description across both datasets.

    Returns the raw token list with duplicates preserved.
    """
    tokens: list[str] = []
    for rec in list(records) + list(classification_records):
        for text in (rec.device_name, rec.product_description):
            if text:
                tokens.extend(_split_field(text))
    return tokens


def _strip_edge_punctuation(token: str) -> str:
    start, end = 0, len(token)
    while start < end and is_punctuation(token[start]):
        start += 1
    while end > start and is_punctuation(token[end - 1]):
        end -= 1
    return token[start:end]


def curate_tokens(raw_tokens: Iterable[str], seed: int = 0) -> VocabCandidateSet:
    """Clean, drop pure-numeric tokens, dedup, and shuffle deterministically."""
    counts: Counter[str] = Counter()
    ordered: list[str] = []
    for raw in raw_tokens:
        token = _strip_edge_punctuation(raw)
        if not token or _DIGITS_ONLY.fullmatch(token):
            continue
        if token not in counts:
            ordered.append(token)
        counts[token] += 1
    rng = np.random.default_rng(seed)
    shuffled = [ordered[i] for i in rng.permutation(len(ordered))]
    return VocabCandidateSet(tokens=tuple(shuffled), provenance_counts=dict(counts), seed=seed)


def sample_for_annotation(
    records: Sequence[RecallRecord], fraction: float, seed: int = 0
) -> list[RecallRecord]:
    """Uniform random sample without replacement of ceil(fraction * n) records."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    n = len(records)
    k = math.ceil(fraction * n)
    rng = np.random.default_rng(seed)
    return [records[i] for i in rng.permutation(n)[:k]]


def order_candidates(candidates: Sequence[str], strategy: str, seed: int = 0) -> list[str]:
    """Permute candidates: seeded shuffle, fifo (input order), or length_desc."""
    if strategy == "fifo":
        return list(candidates)
    if strategy == "shuffle":
        rng = np.random.default_rng(seed)
        return [candidates[i] for i in rng.permutation(len(candidates))]
    if strategy == "length_desc":
        return sorted(candidates, key=lambda tok: -len(tok))
    raise ValueError(f"unknown ordering strategy {strategy!r}; expected one of {ORDER_STRATEGIES}")


def write_candidates(candidates: VocabCandidateSet, path: str | Path) -> None:
    """Plain text, one token per line, with a header comment carrying seed and counts."""
    occurrences = sum(candidates.provenance_counts.values())
    lines = [f"# seed={candidates.seed} tokens={len(candidates.tokens)} occurrences={occurrences}"]
    lines.extend(candidates.tokens)
    Path(path).write_text("".join(f"{line}\n" for line in lines), encoding="utf-8")


def load_candidates(path: str | Path) -> VocabCandidateSet:
    """Read a candidate file written by :func:`write_candidates`.

    Per-token provenance counts are not persisted; the loaded set carries
    empty counts and the seed recorded in the header.
    """
    seed = 0
    tokens: list[str] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            match = re.search(r"seed=(-?\d+)", line)
            if match:
                seed = int(match.group(1))
            continue
        if line:
            tokens.append(line)
    return VocabCandidateSet(tokens=tuple(tokens), provenance_counts={}, seed=seed)
