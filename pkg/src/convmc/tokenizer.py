"""Vocabulary, subword tokenization, two-segment packing, and passage windows.

Tokenization is greedy longest-match over a vocabulary built from the training
corpus: whole words plus "##"-prefixed character pieces so unseen words can
still be split. Every produced token carries the character span it came from,
which is what lets a decoded token span be rendered back as raw paragraph text.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP)

DEFAULT_MAX_SEQ_LEN = 384
DEFAULT_MAX_QUERY_LEN = 64
DEFAULT_DOC_STRIDE = 128


class ConfigError(ValueError):
    """A packing/windowing parameter that cannot work."""


class VocabError(ValueError):
    pass


class Vocabulary:
    """Immutable token<->id map with the four specials pinned to ids 0..3."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:4]) != SPECIAL_TOKENS:
            raise VocabError(
                f"first four tokens must be {SPECIAL_TOKENS}, got {tuple(tokens[:4])}"
            )
        self._id_to_token = list(tokens)
        self._token_to_id = {t: i for i, t in enumerate(tokens)}
        if len(self._token_to_id) != len(self._id_to_token):
            dupes = [t for t, c in Counter(tokens).items() if c > 1]
            raise VocabError(f"duplicate tokens in vocabulary: {dupes[:5]}")

    pad_id, unk_id, cls_id, sep_id = 0, 1, 2, 3

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def id(self, token: str) -> int:
        return self._token_to_id.get(token, self.unk_id)

    def token(self, idx: int) -> str:
        return self._id_to_token[idx]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    @property
    def tokens(self) -> list[str]:
        return list(self._id_to_token)

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 1) -> "Vocabulary":
        """Word-level vocabulary over the corpus, plus character pieces
        ("x" and "##x") so out-of-vocabulary words can be split.
        """
        words: Counter[str] = Counter()
        chars: set[str] = set()
        for text in texts:
            for word, _, _ in _split_words(text):
                words[word] += 1
                chars.update(word)
        kept = sorted(w for w, c in words.items() if c >= min_count)
        pieces: list[str] = []
        for ch in sorted(chars):
            pieces.append(ch)
            pieces.append("##" + ch)
        seen = set(SPECIAL_TOKENS)
        ordered: list[str] = list(SPECIAL_TOKENS)
        for tok in kept + pieces:
            if tok not in seen:
                seen.add(tok)
                ordered.append(tok)
        return cls(ordered)

    # File format: one token per line, line number == id, specials on the
    # first four lines.

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self._id_to_token:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        while tokens and tokens[-1] == "":
            tokens.pop()
        return cls(tokens)


def _lower(text: str) -> str:
    # Per-character so offsets survive the odd Unicode char whose lowercase
    # form has a different length.
    return "".join(c.lower() if len(c.lower()) == 1 else c for c in text)


def _split_words(text: str) -> list[tuple[str, int, int]]:
    """Lowercased words with [begin, end) character offsets.

    Whitespace separates; every non-alphanumeric, non-space character is its
    own word.
    """
    lowered = _lower(text)
    out: list[tuple[str, int, int]] = []
    start = None
    for i, ch in enumerate(lowered):
        if ch.isspace():
            if start is not None:
                out.append((lowered[start:i], start, i))
                start = None
        elif not ch.isalnum():
            if start is not None:
                out.append((lowered[start:i], start, i))
                start = None
            out.append((ch, i, i + 1))
        else:
            if start is None:
                start = i
    if start is not None:
        out.append((lowered[start:], start, len(lowered)))
    return out


def tokenize(text: str, vocab: Vocabulary) -> tuple[list[str], list[tuple[int, int]]]:
    """Greedy longest-match subword split with per-token character spans.

    A word that cannot be fully matched becomes a single [UNK] covering the
    whole word. Spans are non-overlapping and strictly increasing.
    """
    tokens: list[str] = []
    spans: list[tuple[int, int]] = []
    for word, begin, end in _split_words(text):
        if word in vocab:
            tokens.append(word)
            spans.append((begin, end))
            continue
        pieces: list[tuple[str, int, int]] = []
        pos = 0
        while pos < len(word):
            stop = len(word)
            match = None
            while pos < stop:
                cand = word[pos:stop]
                if pos > 0:
                    cand = "##" + cand
                if cand in vocab:
                    match = cand
                    break
                stop -= 1
            if match is None:
                pieces = [(UNK, begin, end)]
                break
            pieces.append((match, begin + pos, begin + stop))
            pos = stop
        for tok, b, e in pieces:
            tokens.append(tok)
            spans.append((b, e))
    return tokens, spans


@dataclass(frozen=True)
class Window:
    """A contiguous slice of passage tokens, offset into the full passage."""

    tokens: tuple[str, ...]
    origin: int

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class PackedSequence:
    """One encoder input: [CLS] query [SEP] passage [SEP]."""

    token_ids: tuple[int, ...]
    segment_ids: tuple[int, ...]
    paragraph_cols: tuple[int, ...]
    window_origin: int

    def __len__(self) -> int:
        return len(self.token_ids)


def pack(
    query_tokens: Sequence[str],
    passage_tokens: Sequence[str],
    vocab: Vocabulary,
    max_seq_len: int = DEFAULT_MAX_SEQ_LEN,
    max_query_len: int = DEFAULT_MAX_QUERY_LEN,
    window_origin: int = 0,
) -> PackedSequence:
    """Pack a query and a passage window into one two-segment sequence.

    The query keeps its leading tokens when over `max_query_len`; the passage
    is truncated to whatever room is left under `max_seq_len`.
    """
    query = list(query_tokens)
    if len(query) > max_query_len:
        logger.warning("query truncated from %d to %d tokens", len(query), max_query_len)
        query = query[:max_query_len]
    capacity = max_seq_len - len(query) - 3
    if capacity < 1:
        raise ConfigError(
            f"max_seq_len={max_seq_len} leaves no room for passage tokens "
            f"next to a {len(query)}-token query and 3 specials"
        )
    passage = list(passage_tokens)
    if len(passage) > capacity:
        logger.warning("passage truncated from %d to %d tokens", len(passage), capacity)
        passage = passage[:capacity]

    ids = [vocab.cls_id] + vocab.encode(query) + [vocab.sep_id] + vocab.encode(passage) + [vocab.sep_id]
    segments = [0] * (len(query) + 2) + [1] * (len(passage) + 1)
    first = len(query) + 2
    cols = tuple(range(first, first + len(passage)))
    return PackedSequence(tuple(ids), tuple(segments), cols, window_origin)


def windows(passage_tokens: Sequence[str], capacity: int, stride: int) -> list[Window]:
    """Sliding windows at offsets 0, stride, 2*stride, ... until the final
    token is covered. Consecutive windows overlap by capacity - stride.
    """
    if capacity < 1:
        raise ConfigError(f"window capacity must be >= 1, got {capacity}")
    if not 1 <= stride <= capacity:
        raise ConfigError(f"stride must be in [1, capacity={capacity}], got {stride}")
    n = len(passage_tokens)
    if n == 0:
        raise ValueError("cannot window an empty passage")
    offsets = [0]
    while offsets[-1] + capacity < n:
        offsets.append(offsets[-1] + stride)
    return [
        Window(tuple(passage_tokens[o : o + capacity]), o) for o in offsets
    ]


def span_to_text(
    paragraph_raw: str,
    alignment: Sequence[tuple[int, int]],
    start_tok: int,
    end_tok: int,
) -> str:
    """Raw-paragraph text under the token span [start_tok, end_tok]."""
    n = len(alignment)
    if not (0 <= start_tok <= end_tok < n):
        raise IndexError(
            f"token span ({start_tok}, {end_tok}) out of range for {n} tokens"
        )
    return paragraph_raw[alignment[start_tok][0] : alignment[end_tok][1]]
