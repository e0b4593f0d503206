"""Micro-BERT encoder: embeddings plus transformer blocks, and the extractor
that keeps only the passage columns of the final hidden states.

One `EncoderWeights` instance is shared by every encoder call of a forward
pass; gradient accumulation across those calls is what ties the current
question, the question history, and the answer history to a single set of
parameters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .tokenizer import ConfigError, PackedSequence, Vocabulary, Window, pack, tokenize

ATTENTION_MASK_VALUE = -1e30
LAYER_NORM_EPS = 1e-12


@dataclass
class EncoderConfig:
    vocab_size: int
    hidden: int = 64
    layers: int = 2
    heads: int = 2
    ff_dim: int = 128
    max_positions: int = 384
    dropout: float = 0.1

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ConfigError(
                f"hidden={self.hidden} not divisible by heads={self.heads}"
            )
        if self.max_positions < 1:
            raise ConfigError("max_positions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


def _param(rng: np.random.Generator, shape: tuple[int, ...], scale: float = 0.02) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def _zeros_param(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones_param(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class _EncoderLayer:
    """Self-attention + feed-forward block with post-norm residuals.

    Query/key projections start near the identity so that attention scores
    begin as raw token-embedding dot products and same-token pairs stand out
    from step one. A pretrained encoder brings that content-matching behavior
    for free; a from-scratch micro-model at this scale has to be born with it.
    """

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        d, f = cfg.hidden, cfg.ff_dim
        self.heads = cfg.heads
        self.dropout = cfg.dropout
        eye = np.eye(d)
        self.wq = Tensor(eye + rng.normal(0.0, 0.02, (d, d)), requires_grad=True)
        self.bq = _zeros_param((1, d))
        self.wk = Tensor(eye + rng.normal(0.0, 0.02, (d, d)), requires_grad=True)
        self.bk = _zeros_param((1, d))
        self.wv, self.bv = _param(rng, (d, d)), _zeros_param((1, d))
        self.wo, self.bo = _param(rng, (d, d)), _zeros_param((1, d))
        self.ln1_g, self.ln1_b = _ones_param((1, d)), _zeros_param((1, d))
        self.w1, self.b1 = _param(rng, (d, f)), _zeros_param((1, f))
        self.w2, self.b2 = _param(rng, (f, d)), _zeros_param((1, d))
        self.ln2_g, self.ln2_b = _ones_param((1, d)), _zeros_param((1, d))

    def named_parameters(self) -> dict[str, Tensor]:
        return {
            "wq": self.wq, "bq": self.bq, "wk": self.wk, "bk": self.bk,
            "wv": self.wv, "bv": self.bv, "wo": self.wo, "bo": self.bo,
            "ln1_g": self.ln1_g, "ln1_b": self.ln1_b,
            "w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2,
            "ln2_g": self.ln2_g, "ln2_b": self.ln2_b,
        }

    def _layer_norm(self, x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
        mu = ad.mean(x, axis=1, keepdims=True)
        centered = x - mu
        var = ad.mean(centered * centered, axis=1, keepdims=True)
        return (centered / ad.sqrt(var + LAYER_NORM_EPS)) * gamma + beta

    def _attention(self, x: Tensor, mask_row: np.ndarray, train, rng, attn_probs):
        d = x.shape[1]
        dh = d // self.heads
        q = x @ self.wq + self.bq
        k = x @ self.wk + self.bk
        v = x @ self.wv + self.bv
        additive = Tensor(np.where(mask_row, 0.0, ATTENTION_MASK_VALUE)[None, :])
        outs = []
        for h in range(self.heads):
            cols = list(range(h * dh, (h + 1) * dh))
            qh = ad.select_columns(q, cols)
            kh = ad.select_columns(k, cols)
            vh = ad.select_columns(v, cols)
            scores = (qh @ kh.T) * (1.0 / np.sqrt(dh)) + additive
            probs = ad.softmax(scores, axis=1)
            if attn_probs is not None:
                attn_probs.append(probs.data.copy())
            if train and self.dropout:
                probs = ad.dropout(probs, self.dropout, rng)
            outs.append(probs @ vh)
        return ad.concat_cols(outs) @ self.wo + self.bo

    def forward(self, x: Tensor, mask_row: np.ndarray, train=False, rng=None, attn_probs=None) -> Tensor:
        att = self._attention(x, mask_row, train, rng, attn_probs)
        if train and self.dropout:
            att = ad.dropout(att, self.dropout, rng)
        x = self._layer_norm(x + att, self.ln1_g, self.ln1_b)
        ff = ad.gelu(x @ self.w1 + self.b1) @ self.w2 + self.b2
        if train and self.dropout:
            ff = ad.dropout(ff, self.dropout, rng)
        return self._layer_norm(x + ff, self.ln2_g, self.ln2_b)


class EncoderWeights:
    """All encoder parameters; a single instance backs every encode call."""

    EMBED_SCALE = 0.1  # wide enough that same-token dot products are visible

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.token_emb = _param(rng, (cfg.vocab_size, cfg.hidden), self.EMBED_SCALE)
        self.segment_emb = _param(rng, (2, cfg.hidden), self.EMBED_SCALE)
        self.position_emb = _param(rng, (cfg.max_positions, cfg.hidden), self.EMBED_SCALE)
        self.layers = [_EncoderLayer(cfg, rng) for _ in range(cfg.layers)]

    def named_parameters(self) -> dict[str, Tensor]:
        params = {
            "token_emb": self.token_emb,
            "segment_emb": self.segment_emb,
            "position_emb": self.position_emb,
        }
        for i, layer in enumerate(self.layers):
            for name, p in layer.named_parameters().items():
                params[f"layer{i}.{name}"] = p
        return params


def encode(
    seq: PackedSequence,
    weights: EncoderWeights,
    *,
    train: bool = False,
    rng: np.random.Generator | None = None,
    pad_id: int = Vocabulary.pad_id,
    attn_probs: list | None = None,
) -> Tensor:
    """Final hidden states for a packed sequence, as a (hidden x len) matrix.

    [PAD] positions are masked out of attention for every query position.
    """
    cfg = weights.cfg
    n = len(seq.token_ids)
    if n > cfg.max_positions:
        raise IndexError(f"sequence length {n} exceeds max_positions {cfg.max_positions}")
    ids = np.asarray(seq.token_ids, dtype=np.intp)
    x = (
        ad.gather_rows(weights.token_emb, ids)
        + ad.gather_rows(weights.segment_emb, np.asarray(seq.segment_ids, dtype=np.intp))
        + ad.gather_rows(weights.position_emb, np.arange(n))
    )
    mask_row = ids != pad_id
    for layer in weights.layers:
        x = layer.forward(x, mask_row, train=train, rng=rng, attn_probs=attn_probs)
    return x.T


def extract_paragraph_features(hidden: Tensor, seq: PackedSequence) -> Tensor:
    """Keep only the passage columns of the final hidden states (hidden x T)."""
    if not seq.paragraph_cols:
        raise ValueError("window contains no passage tokens")
    return ad.select_columns(hidden, seq.paragraph_cols)


def encode_pair(
    query_text: str,
    window: Window,
    vocab: Vocabulary,
    weights: EncoderWeights,
    *,
    max_seq_len: int,
    max_query_len: int,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Passage features for one (query text, passage window) pair.

    This is the single entry point used for the current question, each history
    question, and each history answer; all three call paths share `weights`.
    """
    query_tokens, _ = tokenize(query_text, vocab)
    packed = pack(
        query_tokens,
        window.tokens,
        vocab,
        max_seq_len=max_seq_len,
        max_query_len=max_query_len,
        window_origin=window.origin,
    )
    hidden = encode(packed, weights, train=train, rng=rng)
    return extract_paragraph_features(hidden, packed)
