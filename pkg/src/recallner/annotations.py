"""Span-annotation parsing, rulebook validation, and subword label alignment.

Annotations arrive as doccano-style line-delimited JSON: each line holds
``{"text": ..., "label": [[start, end, tag], ...]}`` with character offsets
over Unicode scalar values. Alignment maps each annotated character span to
word tokens: the first subword of a word carries the label id, continuation
subwords and special tokens carry the ignore id (-100) so they contribute
nothing to the training loss or gradients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .fileio import read_jsonl
from .tokenizer import (
    CONTINUATION_PREFIX,
    SPECIAL_WORD_INDEX,
    UNK_TOKEN,
    Tokenization,
    is_punctuation,
)

IGNORE_ID = -100

B_DEVICE = "B-DEVICE"
I_DEVICE = "I-DEVICE"
O_DEVICE = "O-DEVICE"
OUTSIDE = "O"
SPAN_TAGS = (B_DEVICE, I_DEVICE, O_DEVICE)


class AnnotationError(Exception):
    """Malformed annotation line, out-of-bounds span, or unknown tag."""


class AlignmentError(Exception):
    """Tokenization inconsistent with the document text."""


@dataclass(frozen=True)
class LabelScheme:
    """Bijection between the four labels and ids 0-3, plus the ignore id."""

    label_to_id: dict
    id_to_label: tuple[str, ...]
    ignore_id: int = IGNORE_ID

    @classmethod
    def default(cls) -> "LabelScheme":
        labels = (OUTSIDE, B_DEVICE, I_DEVICE, O_DEVICE)
        return cls(label_to_id={lab: i for i, lab in enumerate(labels)}, id_to_label=labels)

    @property
    def n_labels(self) -> int:
        return len(self.id_to_label)


DEFAULT_SCHEME = LabelScheme.default()


@dataclass(frozen=True)
class Span:
    start: int
    end: int
    label: str


@dataclass(frozen=True)
class AnnotatedDoc:
    doc_id: str
    text: str
    spans: tuple[Span, ...]


@dataclass(frozen=True)
class AlignedExample:
    """Token ids with aligned label ids and an attention mask (pre-padding)."""

    doc_id: str
    ids: tuple[int, ...]
    labels: tuple[int, ...]
    attention_mask: tuple[int, ...]

    def to_json_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "ids": list(self.ids),
            "labels": list(self.labels),
            "attention_mask": list(self.attention_mask),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "AlignedExample":
        return cls(
            doc_id=str(obj["doc_id"]),
            ids=tuple(int(v) for v in obj["ids"]),
            labels=tuple(int(v) for v in obj["labels"]),
            attention_mask=tuple(int(v) for v in obj["attention_mask"]),
        )


def _parse_line(obj: dict, lineno: int) -> AnnotatedDoc:
    if not isinstance(obj, dict) or "text" not in obj:
        raise AnnotationError(f"line {lineno}: expected an object with a 'text' field")
    text = obj["text"]
    if not isinstance(text, str):
        raise AnnotationError(f"line {lineno}: 'text' must be a string")
    doc_id = str(obj.get("doc_id") or obj.get("id") or f"doc-{lineno}")
    spans: list[Span] = []
    for raw in obj.get("label", []):
        try:
            start, end, tag = raw
        except (TypeError, ValueError) as exc:
            raise AnnotationError(f"line {lineno}: malformed span {raw!r}") from exc
        start, end = int(start), int(end)
        if tag not in SPAN_TAGS:
            raise AnnotationError(f"line {lineno}: unknown tag {tag!r}")
        if not 0 <= start < end <= len(text):
            raise AnnotationError(f"line {lineno}: span [{start}, {end}) out of bounds for text of length {len(text)}")
        spans.append(Span(start=start, end=end, label=tag))
    spans.sort(key=lambda s: (s.start, s.end))
    for prev, cur in zip(spans, spans[1:]):
        if cur.start < prev.end:
            raise AnnotationError(f"line {lineno}: overlapping spans [{prev.start},{prev.end}) and [{cur.start},{cur.end})")
    return AnnotatedDoc(doc_id=doc_id, text=text, spans=tuple(spans))


def parse_annotations(path: str | Path) -> list[AnnotatedDoc]:
    """Parse a doccano export; raises AnnotationError on malformed content."""
    docs: list[AnnotatedDoc] = []
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AnnotationError(f"line {lineno}: malformed JSON: {exc}") from exc
            docs.append(_parse_line(obj, lineno))
    return docs


def _trim_span(text: str, span: Span) -> tuple[int, int]:
    """Shrink a span past leading/trailing punctuation and whitespace."""
    start, end = span.start, span.end
    while start < end and (is_punctuation(text[start]) or text[start].isspace()):
        start += 1
    while end > start and (is_punctuation(text[end - 1]) or text[end - 1].isspace()):
        end -= 1
    return start, end


def validate_annotation_rules(doc: AnnotatedDoc) -> list[str]:
    """Check the structurally checkable labeling rules; returns warnings.

    Flags: orphan I/O-DEVICE spans whose contiguous entity region has no
    preceding B-DEVICE; spans that start or end on a punctuation character;
    spans that are empty once punctuation and whitespace are trimmed.
    Annotations always pass through — these are advisory.
    """
    warnings: list[str] = []
    region_has_b = False
    prev_end: int | None = None
    for span in doc.spans:
        text = doc.text[span.start : span.end]
        if prev_end is None or doc.text[prev_end : span.start].strip():
            region_has_b = False  # gap with content starts a new entity region
        if span.label == B_DEVICE:
            region_has_b = True
        elif not region_has_b:
            warnings.append(
                f"{doc.doc_id}: orphan {span.label} span [{span.start},{span.end}) {text!r} has no preceding B-DEVICE"
            )
        if text and (is_punctuation(text[0]) or is_punctuation(text[-1])):
            warnings.append(
                f"{doc.doc_id}: span [{span.start},{span.end}) {text!r} begins or ends on a punctuation character"
            )
        t_start, t_end = _trim_span(doc.text, span)
        if t_start >= t_end:
            warnings.append(f"{doc.doc_id}: span [{span.start},{span.end}) {text!r} is empty after trimming")
        prev_end = span.end
    return warnings


def _word_intervals(tokenization: Tokenization) -> dict[int, tuple[int, int]]:
    intervals: dict[int, tuple[int, int]] = {}
    for w_idx, (start, end) in zip(tokenization.word_index, tokenization.char_offsets):
        if w_idx == SPECIAL_WORD_INDEX:
            continue
        if w_idx in intervals:
            lo, hi = intervals[w_idx]
            intervals[w_idx] = (min(lo, start), max(hi, end))
        else:
            intervals[w_idx] = (start, end)
    return intervals


def _check_offsets(doc: AnnotatedDoc, tokenization: Tokenization) -> None:
    for token, w_idx, (start, end) in zip(
        tokenization.tokens, tokenization.word_index, tokenization.char_offsets
    ):
        if w_idx == SPECIAL_WORD_INDEX:
            continue
        if not 0 <= start <= end <= len(doc.text):
            raise AlignmentError(f"{doc.doc_id}: token offset [{start},{end}) outside text")
        surface = token[len(CONTINUATION_PREFIX):] if token.startswith(CONTINUATION_PREFIX) else token
        if token != UNK_TOKEN and doc.text[start:end] != surface:
            raise AlignmentError(
                f"{doc.doc_id}: token {token!r} does not match text slice {doc.text[start:end]!r}"
            )


def align(doc: AnnotatedDoc, tokenization: Tokenization, scheme: LabelScheme = DEFAULT_SCHEME) -> AlignedExample:
    """Project character-span labels onto subword tokens.

    The first subword of each word overlapping a (trimmed) span receives the
    span's label id; continuation subwords and specials receive the ignore
    id; content words outside every span receive O. The attention mask is 1
    for every real token — padding is added later by batch collation.
    """
    _check_offsets(doc, tokenization)
    intervals = _word_intervals(tokenization)

    trimmed = []
    for span in sorted(doc.spans, key=lambda s: (s.start, s.end)):
        t_start, t_end = _trim_span(doc.text, span)
        if t_start < t_end:
            trimmed.append((t_start, t_end, span.label))

    word_labels: dict[int, int] = {}
    for w_idx, (w_start, w_end) in intervals.items():
        label_id = scheme.label_to_id[OUTSIDE]
        for s_start, s_end, tag in trimmed:
            if w_start < s_end and s_start < w_end:
                label_id = scheme.label_to_id[tag]
                break
        word_labels[w_idx] = label_id

    labels: list[int] = []
    seen_words: set[int] = set()
    for w_idx in tokenization.word_index:
        if w_idx == SPECIAL_WORD_INDEX or w_idx in seen_words:
            labels.append(scheme.ignore_id)
        else:
            seen_words.add(w_idx)
            labels.append(word_labels[w_idx])

    return AlignedExample(
        doc_id=doc.doc_id,
        ids=tokenization.ids,
        labels=tuple(labels),
        attention_mask=tuple(1 for _ in tokenization.ids),
    )


def word_level_labels(example: AlignedExample, scheme: LabelScheme = DEFAULT_SCHEME) -> list[str]:
    """Recover the word-level label sequence (first-subword reads)."""
    return [scheme.id_to_label[lab] for lab in example.labels if lab != scheme.ignore_id]


def write_aligned(path: str | Path, examples: Sequence[AlignedExample]) -> None:
    from .fileio import write_jsonl

    write_jsonl(path, (ex.to_json_dict() for ex in examples))


def load_aligned(path: str | Path) -> list[AlignedExample]:
    return [AlignedExample.from_json_dict(obj) for _, obj in read_jsonl(path)]
