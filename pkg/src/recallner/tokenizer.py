"""Cased WordPiece tokenizer with vocabulary enrichment.

The vocabulary is a token<->id bijection loaded from a plain text file
(one token per line, line index = id). ``enrich`` appends curated domain
tokens; appended tokens are remembered as *extension tokens* and, like the
added tokens of mainstream tokenizer libraries, are matched greedily inside
words and split them into independently tokenized segments. Base-vocabulary
tokens never split words: a word that exists verbatim in the vocabulary is
always emitted whole.
"""

from __future__ import annotations

import json
import math
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN)

CONTINUATION_PREFIX = "##"
MAX_WORD_CHARS = 100

# word_index sentinel for [CLS]/[SEP]; their char_offsets are the empty span (0, 0)
SPECIAL_WORD_INDEX = -1


class VocabularyError(Exception):
    """Raised for malformed vocabulary files or inconsistent lookups."""


def is_punctuation(ch: str) -> bool:
    """Treat all non-alphanumeric ASCII plus Unicode P* as punctuation."""
    cp = ord(ch)
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(ch).startswith("P")


@dataclass(frozen=True)
class Vocabulary:
    """Immutable token<->id bijection with special tokens.

    ``extensions`` holds tokens appended by :func:`enrich`, in addition
    order; they participate in whole-match splitting during tokenization.
    """

    tokens: tuple[str, ...]
    extensions: tuple[str, ...] = ()
    token_to_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        mapping: dict[str, int] = {}
        for idx, tok in enumerate(self.tokens):
            if tok in mapping:
                raise VocabularyError(f"duplicate token {tok!r} at ids {mapping[tok]} and {idx}")
            mapping[tok] = idx
        for special in SPECIAL_TOKENS:
            if special not in mapping:
                raise VocabularyError(f"missing special token {special}")
        for ext in self.extensions:
            if ext not in mapping:
                raise VocabularyError(f"extension token {ext!r} not in vocabulary")
        object.__setattr__(self, "token_to_id", mapping)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_of(self, token: str) -> int:
        return self.token_to_id[token]

    def token_of(self, token_id: int) -> str:
        return self.tokens[token_id]

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD_TOKEN]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK_TOKEN]

    @property
    def cls_id(self) -> int:
        return self.token_to_id[CLS_TOKEN]

    @property
    def sep_id(self) -> int:
        return self.token_to_id[SEP_TOKEN]


def load_vocab(path: str | Path, extensions: Sequence[str] | None = None) -> Vocabulary:
    """Load a vocabulary file (one token per line; line index = id).

    Extension tokens are restored from ``<path>.meta.json`` when present,
    unless an explicit ``extensions`` sequence is given.
    """
    path = Path(path)
    tokens = tuple(line.rstrip("\n") for line in path.read_text(encoding="utf-8").splitlines())
    if extensions is None:
        meta_path = Path(f"{path}.meta.json")
        if meta_path.exists():
            extensions = json.loads(meta_path.read_text(encoding="utf-8")).get("extensions", [])
        else:
            extensions = []
    return Vocabulary(tokens=tokens, extensions=tuple(extensions))


def save_vocab(vocab: Vocabulary, path: str | Path) -> None:
    """Write one token per line; extension tokens go to a ``.meta.json`` sidecar."""
    path = Path(path)
    path.write_text("".join(f"{tok}\n" for tok in vocab.tokens), encoding="utf-8")
    meta_path = Path(f"{path}.meta.json")
    if vocab.extensions:
        meta_path.write_text(
            json.dumps({"extensions": list(vocab.extensions)}, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
    elif meta_path.exists():
        meta_path.unlink()


def pre_split(text: str) -> list[tuple[str, int]]:
    """Split text into (word, char_offset) pairs.

    Splits on whitespace; every punctuation character becomes a standalone
    word (hyphens included), so "mail." -> ["mail", "."] and
    "XRA29-908-28" -> ["XRA29", "-", "908", "-", "28"].
    """
    words: list[tuple[str, int]] = []
    start: int | None = None
    for i, ch in enumerate(text):
        if ch.isspace():
            if start is not None:
                words.append((text[start:i], start))
                start = None
        elif is_punctuation(ch):
            if start is not None:
                words.append((text[start:i], start))
                start = None
            words.append((ch, i))
        elif start is None:
            start = i
    if start is not None:
        words.append((text[start:], start))
    return words


@dataclass(frozen=True)
class Tokenization:
    """Subword tokenization of one text, wrapped with [CLS]/[SEP].

    ``word_index[i]`` is the pre-split word the i-th token came from
    (SPECIAL_WORD_INDEX for specials); ``char_offsets[i]`` is its [start, end)
    span in the original text ((0, 0) for specials).
    """

    tokens: tuple[str, ...]
    ids: tuple[int, ...]
    word_index: tuple[int, ...]
    char_offsets: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.tokens)


def _greedy_pieces(segment: str, vocab: Vocabulary) -> list[str] | None:
    """Longest-match-first WordPiece over one segment; None when stuck."""
    pieces: list[str] = []
    start = 0
    while start < len(segment):
        end = len(segment)
        found: str | None = None
        while start < end:
            candidate = segment[start:end]
            if start > 0:
                candidate = CONTINUATION_PREFIX + candidate
            if candidate in vocab:
                found = candidate
                break
            end -= 1
        if found is None:
            return None
        pieces.append(found)
        start = end
    return pieces


def _split_on_extensions(word: str, extensions: frozenset[str], max_ext_len: int) -> list[tuple[str, bool]]:
    """Leftmost-longest split of ``word`` on extension tokens.

    Returns (segment, is_extension_match) pairs covering the word.
    """
    segments: list[tuple[str, bool]] = []
    i = 0
    last = 0
    n = len(word)
    while i < n:
        match: str | None = None
        for length in range(min(max_ext_len, n - i), 0, -1):
            cand = word[i : i + length]
            if cand in extensions:
                match = cand
                break
        if match is None:
            i += 1
            continue
        if i > last:
            segments.append((word[last:i], False))
        segments.append((match, True))
        i += len(match)
        last = i
    if last < n:
        segments.append((word[last:], False))
    return segments


def _tokenize_word(word: str, offset: int, vocab: Vocabulary) -> list[tuple[str, int, int]]:
    """Tokenize one pre-split word into (piece, start, end) triples."""
    if len(word) > MAX_WORD_CHARS:
        return [(UNK_TOKEN, offset, offset + len(word))]
    # whole-word fast path: a word present in the vocabulary is never split
    if word in vocab:
        return [(word, offset, offset + len(word))]

    if vocab.extensions:
        ext_set = frozenset(vocab.extensions)
        segments = _split_on_extensions(word, ext_set, max(len(e) for e in ext_set))
    else:
        segments = [(word, False)]

    out: list[tuple[str, int, int]] = []
    pos = offset
    for segment, is_ext in segments:
        seg_end = pos + len(segment)
        if is_ext:
            out.append((segment, pos, seg_end))
        else:
            pieces = _greedy_pieces(segment, vocab)
            if pieces is None:
                if len(segments) == 1:
                    return [(UNK_TOKEN, offset, offset + len(word))]
                out.append((UNK_TOKEN, pos, seg_end))
            else:
                piece_pos = pos
                for piece in pieces:
                    length = len(piece) - len(CONTINUATION_PREFIX) if piece.startswith(CONTINUATION_PREFIX) else len(piece)
                    out.append((piece, piece_pos, piece_pos + length))
                    piece_pos += length
        pos = seg_end
    return out


def tokenize(text: str, vocab: Vocabulary, max_len: int = 512) -> Tokenization:
    """Tokenize ``text`` with greedy longest-match WordPiece.

    Content is truncated to ``max_len - 2`` tokens and wrapped with
    [CLS]/[SEP]. Unknown words fall back to [UNK]; this never raises.
    """
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    tokens: list[str] = [CLS_TOKEN]
    word_index: list[int] = [SPECIAL_WORD_INDEX]
    offsets: list[tuple[int, int]] = [(0, 0)]

    budget = max_len - 2
    done = False
    for w_idx, (word, w_off) in enumerate(pre_split(text)):
        for piece, start, end in _tokenize_word(word, w_off, vocab):
            if len(tokens) - 1 == budget:
                done = True
                break
            tokens.append(piece)
            word_index.append(w_idx)
            offsets.append((start, end))
        if done:
            break

    tokens.append(SEP_TOKEN)
    word_index.append(SPECIAL_WORD_INDEX)
    offsets.append((0, 0))
    ids = tuple(vocab.id_of(tok) for tok in tokens)
    return Tokenization(
        tokens=tuple(tokens),
        ids=ids,
        word_index=tuple(word_index),
        char_offsets=tuple(offsets),
    )


def enrich(
    vocab: Vocabulary,
    candidates: "VocabCandidateSet | Sequence[str]",
    fraction: float,
    strategy: str = "fifo",
    seed: int = 0,
) -> Vocabulary:
    """Append the first ``ceil(fraction * k)`` ordered candidates to the vocabulary.

    Candidates already present are skipped; existing ids never change, so
    embedding rows stay valid. Appended tokens become extension tokens.
    """
    from .curation import order_candidates

    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    tokens = list(getattr(candidates, "tokens", candidates))
    ordered = order_candidates(tokens, strategy, seed)
    take = math.ceil(fraction * len(ordered))
    added = [tok for tok in ordered[:take] if tok not in vocab]
    # dedup within the added slice, first occurrence wins
    unique_added: list[str] = []
    seen: set[str] = set()
    for tok in added:
        if tok not in seen:
            seen.add(tok)
            unique_added.append(tok)
    return Vocabulary(
        tokens=vocab.tokens + tuple(unique_added),
        extensions=vocab.extensions + tuple(unique_added),
    )


@dataclass(frozen=True)
class TokenStats:
    total: int
    continuations: int
    unknown: int


@dataclass(frozen=True)
class DocDiff:
    index: int
    a: TokenStats
    b: TokenStats


@dataclass(frozen=True)
class DiffReport:
    per_doc: tuple[DocDiff, ...]
    total_a: TokenStats
    total_b: TokenStats

    @property
    def continuation_delta(self) -> int:
        return self.total_b.continuations - self.total_a.continuations

    @property
    def unknown_delta(self) -> int:
        return self.total_b.unknown - self.total_a.unknown

    @property
    def total_delta(self) -> int:
        return self.total_b.total - self.total_a.total

    def to_json_dict(self) -> dict:
        return {
            "per_doc": [
                {
                    "index": d.index,
                    "a": {"total": d.a.total, "continuations": d.a.continuations, "unknown": d.a.unknown},
                    "b": {"total": d.b.total, "continuations": d.b.continuations, "unknown": d.b.unknown},
                }
                for d in self.per_doc
            ],
            "total_a": {"total": self.total_a.total, "continuations": self.total_a.continuations, "unknown": self.total_a.unknown},
            "total_b": {"total": self.total_b.total, "continuations": self.total_b.continuations, "unknown": self.total_b.unknown},
            "continuation_delta": self.continuation_delta,
            "unknown_delta": self.unknown_delta,
            "total_delta": self.total_delta,
        }


def _stats(tok: Tokenization) -> TokenStats:
    return TokenStats(
        total=len(tok),
        continuations=sum(1 for t in tok.tokens if t.startswith(CONTINUATION_PREFIX)),
        unknown=sum(1 for t in tok.tokens if t == UNK_TOKEN),
    )


def tokenization_diff(
    corpus: Iterable[str],
    vocab_a: Vocabulary,
    vocab_b: Vocabulary,
    max_len: int = 512,
) -> DiffReport:
    """Compare token counts for a corpus under two vocabularies."""
    per_doc: list[DocDiff] = []
    for idx, text in enumerate(corpus):
        per_doc.append(
            DocDiff(index=idx, a=_stats(tokenize(text, vocab_a, max_len)), b=_stats(tokenize(text, vocab_b, max_len)))
        )
    total_a = TokenStats(
        total=sum(d.a.total for d in per_doc),
        continuations=sum(d.a.continuations for d in per_doc),
        unknown=sum(d.a.unknown for d in per_doc),
    )
    total_b = TokenStats(
        total=sum(d.b.total for d in per_doc),
        continuations=sum(d.b.continuations for d in per_doc),
        unknown=sum(d.b.unknown for d in per_doc),
    )
    return DiffReport(per_doc=tuple(per_doc), total_a=total_a, total_b=total_b)
