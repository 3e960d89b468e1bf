"""Synthetic recall corpus with planted device trade names.

Generates short recall-style sentences in which invented trade names
("Xartrom", "Veldex Pump", ...) are annotated as device entities. The
matching base vocabulary contains every context word plus the subword
pieces of each trade name, so unenriched tokenization fragments the names
while enrichment makes them whole tokens. Used by the end-to-end tests and
the demo pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annotations import B_DEVICE, I_DEVICE, AnnotatedDoc, Span
from .ingest import RecallRecord, write_records
from .fileio import write_jsonl
from .tokenizer import CONTINUATION_PREFIX, SPECIAL_TOKENS

DEVICE_PREFIXES = ("Xar", "Vel", "Zor", "Quon", "Tral", "Nyx", "Bram", "Fen", "Gryt", "Plex")
DEVICE_SUFFIXES = ("trom", "dex", "lune", "vak", "mir")
DEVICE_NOUNS = ("Pump", "Monitor", "Catheter", "Stent", "Ventilator")
FIRMS = ("Acme", "Borealis", "Cardia", "Dynamo", "Evergreen")

TEMPLATES_WITH_DEVICE = (
    "{firm} issued an urgent recall of the {device} after reports of failures .",
    "Customers were told to stop using the {device} and contact the firm .",
    "The firm notified hospitals that the {device} requires a correction .",
    "An advisory letter about the {device} was mailed to affected customers .",
    "{firm} recalled certain lots of the {device} due to a labeling defect .",
    "Field engineers will inspect every {device} at no charge .",
)
TEMPLATES_NO_DEVICE = (
    "The firm asked customers to complete and return the enclosed response form .",
    "An updated letter with revised instructions was sent to affected customers .",
)


def device_lexicon() -> list[str]:
    """The 50 planted trade names."""
    return [prefix + suffix for prefix in DEVICE_PREFIXES for suffix in DEVICE_SUFFIXES]


def base_vocab_tokens() -> list[str]:
    """Base vocabulary covering context words and trade-name pieces.

    Trade names themselves are absent, so they tokenize as
    prefix + ##suffix until enrichment adds them.
    """
    words: set[str] = set()
    for template in TEMPLATES_WITH_DEVICE + TEMPLATES_NO_DEVICE:
        for word in template.split():
            if word not in ("{firm}", "{device}"):
                words.add(word)
    words.update(DEVICE_NOUNS)
    words.update(FIRMS)
    words.update(DEVICE_PREFIXES)
    words.update(CONTINUATION_PREFIX + suffix for suffix in DEVICE_SUFFIXES)
    return list(SPECIAL_TOKENS) + sorted(words)


@dataclass(frozen=True)
class SyntheticCorpus:
    records: tuple[RecallRecord, ...]
    docs: tuple[AnnotatedDoc, ...]
    lexicon: tuple[str, ...]
    vocab_tokens: tuple[str, ...]


def generate_corpus(n_docs: int = 200, seed: int = 0, entity_rate: float = 0.9) -> SyntheticCorpus:
    """Build ``n_docs`` synthetic recall actions with span annotations."""
    rng = np.random.default_rng(seed)
    lexicon = device_lexicon()
    records: list[RecallRecord] = []
    docs: list[AnnotatedDoc] = []
    for i in range(n_docs):
        doc_id = f"SYN-{i:05d}"
        has_entity = rng.random() < entity_rate
        if has_entity:
            template = TEMPLATES_WITH_DEVICE[int(rng.integers(len(TEMPLATES_WITH_DEVICE)))]
            device_words = [lexicon[int(rng.integers(len(lexicon)))]]
            if rng.random() < 0.5:
                device_words.append(DEVICE_NOUNS[int(rng.integers(len(DEVICE_NOUNS)))])
        else:
            template = TEMPLATES_NO_DEVICE[int(rng.integers(len(TEMPLATES_NO_DEVICE)))]
            device_words = []
        firm = FIRMS[int(rng.integers(len(FIRMS)))]

        words: list[str] = []
        tags: list[str | None] = []
        for word in template.split():
            if word == "{device}":
                for j, dev_word in enumerate(device_words):
                    words.append(dev_word)
                    tags.append(B_DEVICE if j == 0 else I_DEVICE)
            elif word == "{firm}":
                words.append(firm)
                tags.append(None)
            else:
                words.append(word)
                tags.append(None)

        spans: list[Span] = []
        pos = 0
        for word, tag in zip(words, tags):
            if tag is not None:
                spans.append(Span(start=pos, end=pos + len(word), label=tag))
            pos += len(word) + 1
        text = " ".join(words)

        docs.append(AnnotatedDoc(doc_id=doc_id, text=text, spans=tuple(spans)))
        records.append(
            RecallRecord(
                cfres_id=doc_id,
                recall_action=text,
                device_name=" ".join(device_words),
                product_description="",
            )
        )
    return SyntheticCorpus(
        records=tuple(records),
        docs=tuple(docs),
        lexicon=tuple(lexicon),
        vocab_tokens=tuple(base_vocab_tokens()),
    )


def write_corpus(corpus: SyntheticCorpus, out_dir: str | Path) -> dict:
    """Persist records, annotations, and the base vocabulary; returns paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records_path = out_dir / "records.jsonl"
    annotations_path = out_dir / "annotations.jsonl"
    vocab_path = out_dir / "vocab.txt"

    write_records(records_path, corpus.records, source="fixture")
    write_jsonl(
        annotations_path,
        (
            {
                "doc_id": doc.doc_id,
                "text": doc.text,
                "label": [[span.start, span.end, span.label] for span in doc.spans],
            }
            for doc in corpus.docs
        ),
    )
    vocab_path.write_text("".join(f"{tok}\n" for tok in corpus.vocab_tokens), encoding="utf-8")
    return {
        "records": records_path,
        "annotations": annotations_path,
        "vocab": vocab_path,
    }
