"""Run a trained model over raw text and emit thresholded token predictions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .annotations import DEFAULT_SCHEME, OUTSIDE, LabelScheme
from .model import Parameters, forward
from .tokenizer import SPECIAL_WORD_INDEX, Vocabulary, tokenize

REPORT_LINE = "Token: {token} - Label: {label}"


@dataclass(frozen=True)
class TokenPrediction:
    token: str
    label: str
    confidence: float  # max of the token's softmax row
    position: int      # index within the tokenization

    def to_json_dict(self) -> dict:
        return {
            "token": self.token,
            "label": self.label,
            "confidence": self.confidence,
            "position": self.position,
        }


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(-1, keepdims=True)


def predict(
    params: Parameters,
    vocab: Vocabulary,
    text: str,
    scheme: LabelScheme = DEFAULT_SCHEME,
) -> list[TokenPrediction]:
    """Tokenize, run the encoder in eval mode, and read per-token argmax labels.

    Special tokens are excluded from the output; positions refer to the full
    tokenization so they stay stable either way.
    """
    if not text:
        raise ValueError("text must be non-empty")
    if params.config.vocab_size < len(vocab):
        raise ValueError(
            f"vocabulary has {len(vocab)} tokens but the model only embeds {params.config.vocab_size}"
        )
    tok = tokenize(text, vocab, max_len=params.config.max_positions)
    ids = np.asarray([tok.ids], dtype=np.int64)
    mask = np.ones_like(ids)
    logits, _ = forward(params, ids, mask, train=False)
    probs = _softmax_rows(logits[0])
    predictions: list[TokenPrediction] = []
    for pos, (token, w_idx) in enumerate(zip(tok.tokens, tok.word_index)):
        if w_idx == SPECIAL_WORD_INDEX:
            continue
        row = probs[pos]
        label_id = int(row.argmax())
        predictions.append(
            TokenPrediction(
                token=token,
                label=scheme.id_to_label[label_id],
                confidence=float(row[label_id]),
                position=pos,
            )
        )
    return predictions


def threshold_report(preds: Sequence[TokenPrediction], tau: float = 0.99) -> list[str]:
    """Keep predictions with confidence >= tau and a non-O label, in order.

    Each kept prediction renders as ``Token: <token> - Label: <label>``.
    """
    if not 0 <= tau <= 1:
        raise ValueError("tau must be in [0, 1]")
    return [
        REPORT_LINE.format(token=p.token, label=p.label)
        for p in preds
        if p.confidence >= tau and p.label != OUTSIDE
    ]


def threshold_predictions(
    preds: Sequence[TokenPrediction], tau: float = 0.99
) -> list[TokenPrediction]:
    """Same filter as :func:`threshold_report` but returning the predictions."""
    if not 0 <= tau <= 1:
        raise ValueError("tau must be in [0, 1]")
    return [p for p in preds if p.confidence >= tau and p.label != OUTSIDE]
