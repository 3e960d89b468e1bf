"""Entity-level precision/recall/F1 over BIO label sequences.

Scoring is exact span match: a predicted entity counts only when its
(doc, start, end) triple appears in the gold set. Cross-fold averaging is
the arithmetic mean of per-fold percentages.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .annotations import B_DEVICE, I_DEVICE, O_DEVICE, OUTSIDE


@dataclass(frozen=True)
class EntitySpan:
    start_token: int
    end_token: int  # exclusive
    doc_id: str = ""

    def __post_init__(self) -> None:
        if self.start_token >= self.end_token:
            raise ValueError("entity span must satisfy start < end")


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    fn: int
    precision: float  # percent
    recall: float
    f1: float
    per_fold: tuple = ()
    averaged: bool = False

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "MetricsReport":
        precision = 100.0 * tp / (tp + fp) if tp + fp else 0.0
        recall = 100.0 * tp / (tp + fn) if tp + fn else 0.0
        f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(tp=tp, fp=fp, fn=fn, precision=precision, recall=recall, f1=f1)

    def to_json_dict(self) -> dict:
        out = {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "averaged": self.averaged,
        }
        if self.per_fold:
            out["per_fold"] = [fold.to_json_dict() for fold in self.per_fold]
        return out


def extract_entities(labels: Sequence[str], doc_id: str = "") -> list[EntitySpan]:
    """Decode word-level BIO labels into entity spans (lenient decoding).

    A span starts at B-DEVICE, continues through I-DEVICE and O-DEVICE, and
    ends before O or the next B-DEVICE. An orphan I-DEVICE/O-DEVICE with no
    open span starts a new one.
    """
    spans: list[EntitySpan] = []
    start: int | None = None

    def close(end: int) -> None:
        nonlocal start
        if start is not None:
            spans.append(EntitySpan(start_token=start, end_token=end, doc_id=doc_id))
            start = None

    for i, label in enumerate(labels):
        if label == B_DEVICE:
            close(i)
            start = i
        elif label in (I_DEVICE, O_DEVICE):
            if start is None:
                start = i
        elif label == OUTSIDE:
            close(i)
        else:
            raise ValueError(f"unknown label {label!r}")
    close(len(labels))
    return spans


def prf1(pred_spans: Iterable[EntitySpan], gold_spans: Iterable[EntitySpan]) -> MetricsReport:
    """Exact-match span scoring: tp = |pred & gold|, fp/fn the differences."""
    pred = set(pred_spans)
    gold = set(gold_spans)
    tp = len(pred & gold)
    return MetricsReport.from_counts(tp=tp, fp=len(pred - gold), fn=len(gold - pred))


def average_folds(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Macro average of per-fold precision/recall/F1; counts are summed."""
    if not reports:
        raise ValueError("average_folds requires at least one fold report")
    n = len(reports)
    return MetricsReport(
        tp=sum(r.tp for r in reports),
        fp=sum(r.fp for r in reports),
        fn=sum(r.fn for r in reports),
        precision=sum(r.precision for r in reports) / n,
        recall=sum(r.recall for r in reports) / n,
        f1=sum(r.f1 for r in reports) / n,
        per_fold=tuple(reports),
        averaged=True,
    )
