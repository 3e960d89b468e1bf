"""Compact pre-norm transformer encoder for token classification.

Forward, masked cross-entropy, and exact reverse-mode backprop are written
directly in numpy so gradients can be verified against finite differences
at 64-bit precision. Dropout sits after the embedding sum and inside each
encoder layer (attention output and feed-forward output), train mode only,
seeded for reproducibility.

Checkpoints are a single file: one JSON header line (config, seed, step,
tensor names and shapes) followed by raw little-endian float32 tensors in
declared order.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np
from scipy.special import erf

from .annotations import IGNORE_ID

LN_EPS = 1e-5
ATTENTION_NEG = -1e9
INIT_STD = 0.02

CHECKPOINT_FORMAT = "recallner-ckpt"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 128
    max_positions: int = 512
    n_labels: int = 4
    dropout_rate: float = 0.1
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self) -> None:
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")
        if not 1 <= self.max_positions <= 512:
            raise ValueError("max_positions must be in [1, 512]")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def np_dtype(self) -> type:
        return np.float64 if self.dtype == "float64" else np.float32

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


@dataclass
class LayerParams:
    attn_norm_gain: np.ndarray
    attn_norm_bias: np.ndarray
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ffn_norm_gain: np.ndarray
    ffn_norm_bias: np.ndarray
    ffn_in_w: np.ndarray
    ffn_in_b: np.ndarray
    ffn_out_w: np.ndarray
    ffn_out_b: np.ndarray


@dataclass
class Parameters:
    """All trainable tensors; ``tensors()`` fixes the canonical order."""

    config: ModelConfig
    token_embedding: np.ndarray
    position_embedding: np.ndarray
    layers: list[LayerParams]
    final_norm_gain: np.ndarray
    final_norm_bias: np.ndarray
    classifier_w: np.ndarray
    classifier_b: np.ndarray

    def tensors(self) -> dict:
        out: dict[str, np.ndarray] = {
            "token_embedding": self.token_embedding,
            "position_embedding": self.position_embedding,
        }
        for i, layer in enumerate(self.layers):
            for fname in (f.name for f in dataclasses.fields(LayerParams)):
                out[f"layer{i}.{fname}"] = getattr(layer, fname)
        out["final_norm_gain"] = self.final_norm_gain
        out["final_norm_bias"] = self.final_norm_bias
        out["classifier_w"] = self.classifier_w
        out["classifier_b"] = self.classifier_b
        return out

    def with_tensors(self, tensors: Mapping[str, np.ndarray]) -> "Parameters":
        layers = []
        for i in range(self.config.n_layers):
            kwargs = {
                fname: tensors[f"layer{i}.{fname}"]
                for fname in (f.name for f in dataclasses.fields(LayerParams))
            }
            layers.append(LayerParams(**kwargs))
        return Parameters(
            config=self.config,
            token_embedding=tensors["token_embedding"],
            position_embedding=tensors["position_embedding"],
            layers=layers,
            final_norm_gain=tensors["final_norm_gain"],
            final_norm_bias=tensors["final_norm_bias"],
            classifier_w=tensors["classifier_w"],
            classifier_b=tensors["classifier_b"],
        )


def init_params(config: ModelConfig) -> Parameters:
    """Seeded init: normal(0, 0.02) weights, zero biases, identity layer norm."""
    rng = np.random.default_rng(config.seed)
    dt = config.np_dtype

    def weight(*shape: int) -> np.ndarray:
        return rng.normal(0.0, INIT_STD, size=shape).astype(dt)

    def zeros(*shape: int) -> np.ndarray:
        return np.zeros(shape, dtype=dt)

    def ones(*shape: int) -> np.ndarray:
        return np.ones(shape, dtype=dt)

    d, f = config.d_model, config.d_ff
    layers = [
        LayerParams(
            attn_norm_gain=ones(d),
            attn_norm_bias=zeros(d),
            wq=weight(d, d),
            bq=zeros(d),
            wk=weight(d, d),
            bk=zeros(d),
            wv=weight(d, d),
            bv=zeros(d),
            wo=weight(d, d),
            bo=zeros(d),
            ffn_norm_gain=ones(d),
            ffn_norm_bias=zeros(d),
            ffn_in_w=weight(d, f),
            ffn_in_b=zeros(f),
            ffn_out_w=weight(f, d),
            ffn_out_b=zeros(d),
        )
        for _ in range(config.n_layers)
    ]
    return Parameters(
        config=config,
        token_embedding=weight(config.vocab_size, d),
        position_embedding=weight(config.max_positions, d),
        layers=layers,
        final_norm_gain=ones(d),
        final_norm_bias=zeros(d),
        classifier_w=weight(d, config.n_labels),
        classifier_b=zeros(config.n_labels),
    )


def resize_embeddings(params: Parameters, new_vocab_size: int, seed: int = 0) -> Parameters:
    """Grow the token embedding; existing rows are preserved bit-exact."""
    old = params.config.vocab_size
    if new_vocab_size < old:
        raise ValueError(f"cannot shrink vocab from {old} to {new_vocab_size}")
    if new_vocab_size == old:
        return params
    rng = np.random.default_rng(seed)
    new_rows = rng.normal(0.0, INIT_STD, size=(new_vocab_size - old, params.config.d_model))
    emb = np.concatenate([params.token_embedding, new_rows.astype(params.token_embedding.dtype)])
    return dataclasses.replace(
        params,
        config=dataclasses.replace(params.config, vocab_size=new_vocab_size),
        token_embedding=emb,
    )


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return gain * xhat + bias, xhat, inv


def _layer_norm_backward(
    dy: np.ndarray, xhat: np.ndarray, inv: np.ndarray, gain: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    dgain = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    dbias = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * gain
    dx = inv * (
        dxhat
        - dxhat.mean(-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(-1, keepdims=True)
    )
    return dx, dgain, dbias


_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w + b


def _linear_backward(
    dy: np.ndarray, x: np.ndarray, w: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    din, dout = w.shape
    dw = x.reshape(-1, din).T @ dy.reshape(-1, dout)
    db = dy.reshape(-1, dout).sum(0)
    dx = dy @ w.T
    return dx, dw, db


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(-1, keepdims=True)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


# ---------------------------------------------------------------------------
# forward / loss / backward
# ---------------------------------------------------------------------------


def forward(
    params: Parameters,
    ids: np.ndarray,
    attention_mask: np.ndarray,
    train: bool = False,
    dropout_seed: int = 0,
) -> tuple[np.ndarray, dict]:
    """Run the encoder; returns (logits [batch, seq, n_labels], cache).

    The cache holds every activation and dropout mask needed by
    :func:`backward`. Padding positions are masked out of the attention
    scores so they never influence real tokens.
    """
    cfg = params.config
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(attention_mask, dtype=np.int64)
    if ids.ndim != 2 or mask.shape != ids.shape:
        raise ValueError("ids and attention_mask must be matching 2-D arrays")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise ValueError("token id out of range for the vocabulary")
    batch, seq = ids.shape
    if seq > cfg.max_positions:
        raise ValueError(f"sequence length {seq} exceeds max_positions {cfg.max_positions}")
    dt = params.token_embedding.dtype

    use_dropout = train and cfg.dropout_rate > 0
    rng = np.random.default_rng(dropout_seed) if use_dropout else None

    def dropout_mask(shape: tuple[int, ...]) -> np.ndarray | None:
        if rng is None:
            return None
        keep = rng.random(shape) >= cfg.dropout_rate
        return keep.astype(dt) / dt.type(1.0 - cfg.dropout_rate)

    def apply(x: np.ndarray, m: np.ndarray | None) -> np.ndarray:
        return x if m is None else x * m

    # additive attention bias: large negative at padded key positions
    attn_bias = ((1 - mask)[:, None, None, :] * ATTENTION_NEG).astype(dt)
    scale = dt.type(1.0 / np.sqrt(cfg.head_dim))

    emb_mask = dropout_mask((batch, seq, cfg.d_model))
    h = apply(params.token_embedding[ids] + params.position_embedding[:seq][None, :, :], emb_mask)

    cache: dict = {
        "ids": ids,
        "attention_mask": mask,
        "emb_dropout": emb_mask,
        "layers": [],
        "params_id": id(params),
    }

    for layer in params.layers:
        a, xhat1, inv1 = _layer_norm(h, layer.attn_norm_gain, layer.attn_norm_bias)
        q = _split_heads(_linear(a, layer.wq, layer.bq), cfg.n_heads)
        k = _split_heads(_linear(a, layer.wk, layer.bk), cfg.n_heads)
        v = _split_heads(_linear(a, layer.wv, layer.bv), cfg.n_heads)
        scores = np.matmul(q, k.transpose(0, 1, 3, 2)) * scale + attn_bias
        probs = _softmax(scores)
        ctx = _merge_heads(np.matmul(probs, v))
        attn_out = _linear(ctx, layer.wo, layer.bo)
        attn_drop = dropout_mask(attn_out.shape)
        h1 = h + apply(attn_out, attn_drop)

        f, xhat2, inv2 = _layer_norm(h1, layer.ffn_norm_gain, layer.ffn_norm_bias)
        z1 = _linear(f, layer.ffn_in_w, layer.ffn_in_b)
        u = _gelu(z1)
        z2 = _linear(u, layer.ffn_out_w, layer.ffn_out_b)
        ffn_drop = dropout_mask(z2.shape)
        h_out = h1 + apply(z2, ffn_drop)

        cache["layers"].append(
            {
                "a": a,
                "xhat1": xhat1,
                "inv1": inv1,
                "q": q,
                "k": k,
                "v": v,
                "probs": probs,
                "ctx": ctx,
                "attn_dropout": attn_drop,
                "f": f,
                "xhat2": xhat2,
                "inv2": inv2,
                "z1": z1,
                "u": u,
                "ffn_dropout": ffn_drop,
            }
        )
        h = h_out

    hf, xhat_f, inv_f = _layer_norm(h, params.final_norm_gain, params.final_norm_bias)
    logits = _linear(hf, params.classifier_w, params.classifier_b)
    cache["xhat_f"] = xhat_f
    cache["inv_f"] = inv_f
    cache["hf"] = hf
    cache["scale"] = scale
    return logits, cache


def masked_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-softmax over positions with label != IGNORE_ID.

    Ignored positions contribute exactly zero to the loss and to d-logits.
    A fully masked batch yields loss 0 and a zero gradient.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logits.shape[:-1] != labels.shape:
        raise ValueError("logits and labels shapes do not match")
    keep = labels != IGNORE_ID
    n = int(keep.sum())
    dlogits = np.zeros_like(logits)
    if n == 0:
        return 0.0, dlogits

    shifted = logits - logits.max(-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(-1, keepdims=True))
    log_probs = shifted - log_z

    rows = np.nonzero(keep)
    picked = labels[rows]
    loss = -log_probs[rows + (picked,)].sum() / n

    probs = np.exp(log_probs)
    grad = probs[rows]
    grad[np.arange(n), picked] -= 1.0
    dlogits[rows] = grad / n
    return float(loss), dlogits


def backward(params: Parameters, cache: dict, dlogits: np.ndarray) -> dict:
    """Exact gradients for every parameter tensor, keyed like ``tensors()``."""
    if cache.get("params_id") != id(params):
        raise ValueError("cache does not belong to these parameters")
    cfg = params.config
    ids = cache["ids"]
    batch, seq = ids.shape
    scale = cache["scale"]
    grads: dict[str, np.ndarray] = {}

    dhf, dw, db = _linear_backward(dlogits, cache["hf"], params.classifier_w)
    grads["classifier_w"] = dw
    grads["classifier_b"] = db
    dh, dgain, dbias = _layer_norm_backward(dhf, cache["xhat_f"], cache["inv_f"], params.final_norm_gain)
    grads["final_norm_gain"] = dgain
    grads["final_norm_bias"] = dbias

    for i in range(cfg.n_layers - 1, -1, -1):
        layer = params.layers[i]
        lc = cache["layers"][i]

        # feed-forward branch: h_out = h1 + dropout(ffn(LN2(h1)))
        dz2 = dh if lc["ffn_dropout"] is None else dh * lc["ffn_dropout"]
        du, dw2, db2 = _linear_backward(dz2, lc["u"], layer.ffn_out_w)
        grads[f"layer{i}.ffn_out_w"] = dw2
        grads[f"layer{i}.ffn_out_b"] = db2
        dz1 = du * _gelu_grad(lc["z1"])
        df, dw1, db1 = _linear_backward(dz1, lc["f"], layer.ffn_in_w)
        grads[f"layer{i}.ffn_in_w"] = dw1
        grads[f"layer{i}.ffn_in_b"] = db1
        dh1_ln, dgain2, dbias2 = _layer_norm_backward(df, lc["xhat2"], lc["inv2"], layer.ffn_norm_gain)
        grads[f"layer{i}.ffn_norm_gain"] = dgain2
        grads[f"layer{i}.ffn_norm_bias"] = dbias2
        dh1 = dh + dh1_ln

        # attention branch: h1 = h + dropout(attn(LN1(h)))
        dattn = dh1 if lc["attn_dropout"] is None else dh1 * lc["attn_dropout"]
        dctx_flat, dwo, dbo = _linear_backward(dattn, lc["ctx"], layer.wo)
        grads[f"layer{i}.wo"] = dwo
        grads[f"layer{i}.bo"] = dbo
        dctx = _split_heads(dctx_flat, cfg.n_heads)

        probs, q, k, v = lc["probs"], lc["q"], lc["k"], lc["v"]
        dprobs = np.matmul(dctx, v.transpose(0, 1, 3, 2))
        dv = np.matmul(probs.transpose(0, 1, 3, 2), dctx)
        dscores = probs * (dprobs - (dprobs * probs).sum(-1, keepdims=True))
        dq = np.matmul(dscores, k) * scale
        dk = np.matmul(dscores.transpose(0, 1, 3, 2), q) * scale

        a = lc["a"]
        da = np.zeros_like(a)
        for dhead, w_name, b_name, w in (
            (dq, "wq", "bq", layer.wq),
            (dk, "wk", "bk", layer.wk),
            (dv, "wv", "bv", layer.wv),
        ):
            dx, dw_, db_ = _linear_backward(_merge_heads(dhead), a, w)
            grads[f"layer{i}.{w_name}"] = dw_
            grads[f"layer{i}.{b_name}"] = db_
            da += dx

        dh_ln, dgain1, dbias1 = _layer_norm_backward(da, lc["xhat1"], lc["inv1"], layer.attn_norm_gain)
        grads[f"layer{i}.attn_norm_gain"] = dgain1
        grads[f"layer{i}.attn_norm_bias"] = dbias1
        dh = dh1 + dh_ln

    if cache["emb_dropout"] is not None:
        dh = dh * cache["emb_dropout"]
    d_tok = np.zeros_like(params.token_embedding)
    np.add.at(d_tok, ids, dh)
    grads["token_embedding"] = d_tok
    d_pos = np.zeros_like(params.position_embedding)
    d_pos[:seq] = dh.sum(0)
    grads["position_embedding"] = d_pos
    return grads


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Checkpoint:
    params: Parameters
    seed: int
    step: int


def save_checkpoint(path: str | Path, params: Parameters, seed: int = 0, step: int = 0) -> None:
    """One JSON header line, then raw float32 little-endian tensors in order."""
    tensors = params.tensors()
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "config": params.config.to_json_dict(),
        "seed": seed,
        "step": step,
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in tensors.items()],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for arr in tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"not a {CHECKPOINT_FORMAT} file: {path}")
        config = ModelConfig.from_json_dict(header["config"])
        tensors: dict[str, np.ndarray] = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 4)
            if len(raw) != count * 4:
                raise ValueError(f"truncated checkpoint: {path}")
            tensors[spec["name"]] = (
                np.frombuffer(raw, dtype="<f4").reshape(shape).astype(config.np_dtype)
            )
    template = init_params(config)
    return Checkpoint(
        params=template.with_tensors(tensors),
        seed=int(header["seed"]),
        step=int(header["step"]),
    )
