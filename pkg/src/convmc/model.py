"""Span-extraction model over dialogue-conditioned passage features.

The passage is encoded once per conditioning text (current question, each
history question, each history answer) with a shared encoder; the feature
blocks are stacked row-wise, run through two BiGRUs along the token axis, and
projected into start/end distributions plus an optional 4-way answer type.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import EncoderConfig, EncoderWeights, encode_pair
from .tokenizer import (
    ConfigError,
    DEFAULT_MAX_QUERY_LEN,
    DEFAULT_MAX_SEQ_LEN,
    Vocabulary,
    Window,
)


class AnswerType(str, Enum):
    SPAN = "span"
    YES = "yes"
    NO = "no"
    UNANSWERABLE = "unanswerable"


ANSWER_TYPES = (AnswerType.SPAN, AnswerType.YES, AnswerType.NO, AnswerType.UNANSWERABLE)
TYPE_INDEX = {t: i for i, t in enumerate(ANSWER_TYPES)}


@dataclass
class CMCConfig:
    """History depth and ablation switches; flags only zero out feature
    blocks, shapes never change with them."""

    k: int = 2
    use_question_history: bool = True
    use_answer_history: bool = True
    num_types: int = 4
    max_answer_len: int = 30

    def __post_init__(self):
        if self.k < 0:
            raise ConfigError(f"k must be >= 0, got {self.k}")
        if self.max_answer_len < 1:
            raise ConfigError("max_answer_len must be >= 1")


@dataclass(frozen=True)
class DialogueContext:
    """Current question plus exactly k previous questions and k previous
    answers (text); slots for turns that do not exist are None."""

    question: str
    prev_questions: tuple
    prev_answers: tuple
    turn: int = 1


@dataclass
class SpanLogits:
    """Detached per-window distributions, ready for decoding."""

    p_start: np.ndarray
    p_end: np.ndarray
    p_type: np.ndarray | None
    window_origin: int

    def __post_init__(self):
        for name, p in (("p_start", self.p_start), ("p_end", self.p_end)):
            if abs(float(p.sum()) - 1.0) > 1e-9:
                raise ValueError(f"{name} does not sum to 1")
        if self.p_type is not None and abs(float(self.p_type.sum()) - 1.0) > 1e-9:
            raise ValueError("p_type does not sum to 1")


class BiGRU:
    """Bidirectional GRU over the token axis: (r x T) -> (2h x T).

    Initial states are zero. Per direction the recurrence is

        z_t = sigmoid(Wz x_t + Uz h_{t-1} + bz)
        r_t = sigmoid(Wr x_t + Ur h_{t-1} + br)
        c_t = tanh(Wc x_t + Uc (r_t * h_{t-1}) + bc)
        h_t = (1 - z_t) * h_{t-1} + z_t * c_t
    """

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.in_dim = in_dim
        self.hidden = hidden
        self._dirs = {}
        for name in ("fwd", "bwd"):
            s_in = 1.0 / np.sqrt(in_dim)
            s_h = 1.0 / np.sqrt(hidden)
            self._dirs[name] = {
                "w_zr": Tensor(rng.uniform(-s_in, s_in, (2 * hidden, in_dim)), requires_grad=True),
                "u_zr": Tensor(rng.uniform(-s_h, s_h, (2 * hidden, hidden)), requires_grad=True),
                "b_zr": Tensor(np.zeros((2 * hidden, 1)), requires_grad=True),
                "w_c": Tensor(rng.uniform(-s_in, s_in, (hidden, in_dim)), requires_grad=True),
                "u_c": Tensor(rng.uniform(-s_h, s_h, (hidden, hidden)), requires_grad=True),
                "b_c": Tensor(np.zeros((hidden, 1)), requires_grad=True),
            }

    def named_parameters(self) -> dict[str, Tensor]:
        return {
            f"{direction}.{name}": p
            for direction, params in self._dirs.items()
            for name, p in params.items()
        }

    def _run_direction(self, x: Tensor, params: dict, order: range) -> list[Tensor]:
        h = self.hidden
        # Input projections for all timesteps in two matmuls.
        zr_in = params["w_zr"] @ x + params["b_zr"]
        c_in = params["w_c"] @ x + params["b_c"]
        z_rows = list(range(h))
        r_rows = list(range(h, 2 * h))
        outputs: dict[int, Tensor] = {}
        state = Tensor(np.zeros((h, 1)))
        for t in order:
            zr = ad.sigmoid(
                ad.select_columns(zr_in, [t]) + params["u_zr"] @ state
            )
            z = ad.gather_rows(zr, z_rows)
            r = ad.gather_rows(zr, r_rows)
            cand = ad.tanh(
                ad.select_columns(c_in, [t]) + params["u_c"] @ (r * state)
            )
            state = (1.0 - z) * state + z * cand
            outputs[t] = state
        return [outputs[t] for t in range(len(order))]

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[0] != self.in_dim:
            raise ad.ShapeError(
                f"BiGRU expects ({self.in_dim} x T) input, got {x.shape}"
            )
        tlen = x.shape[1]
        fwd = self._run_direction(x, self._dirs["fwd"], range(tlen))
        bwd = self._run_direction(x, self._dirs["bwd"], range(tlen - 1, -1, -1))
        return ad.concat_rows(
            [ad.concat_cols(fwd), ad.concat_cols(bwd)]
        )


@dataclass
class WindowOutput:
    """Live (graph-attached) forward results for one passage window."""

    p_start: Tensor  # 1 x T
    p_end: Tensor  # 1 x T
    g: Tensor  # (2k+1)d x T
    m2: Tensor  # 2d x T
    window: Window

    @property
    def T(self) -> int:
        return self.p_start.shape[1]


class CMCModel:
    """Shared encoder + two BiGRUs + span/type heads."""

    def __init__(
        self,
        encoder_cfg: EncoderConfig,
        cmc_cfg: CMCConfig,
        *,
        type_head: bool = True,
        max_seq_len: int = DEFAULT_MAX_SEQ_LEN,
        max_query_len: int = DEFAULT_MAX_QUERY_LEN,
        seed: int = 0,
    ):
        if encoder_cfg.max_positions < max_seq_len:
            raise ConfigError(
                f"max_positions={encoder_cfg.max_positions} < max_seq_len={max_seq_len}"
            )
        self.encoder_cfg = encoder_cfg
        self.cmc_cfg = cmc_cfg
        self.max_seq_len = max_seq_len
        self.max_query_len = max_query_len
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.encoder = EncoderWeights(encoder_cfg, rng)
        d, k = encoder_cfg.hidden, cmc_cfg.k
        self.bigru1 = BiGRU((2 * k + 1) * d, d, rng)
        self.bigru2 = BiGRU(2 * d, d, rng)
        proj = (2 * k + 3) * d
        self.start_w = Tensor(rng.normal(0, 0.02, (1, proj)), requires_grad=True)
        self.start_b = Tensor(np.zeros((1, 1)), requires_grad=True)
        self.end_w = Tensor(rng.normal(0, 0.02, (1, proj)), requires_grad=True)
        self.end_b = Tensor(np.zeros((1, 1)), requires_grad=True)
        if type_head:
            self.type_w = Tensor(
                rng.normal(0, 0.02, (cmc_cfg.num_types, proj)), requires_grad=True
            )
            self.type_b = Tensor(np.zeros((cmc_cfg.num_types, 1)), requires_grad=True)
        else:
            self.type_w = self.type_b = None

    @property
    def has_type_head(self) -> bool:
        return self.type_w is not None

    @property
    def hidden(self) -> int:
        return self.encoder_cfg.hidden

    @property
    def k(self) -> int:
        return self.cmc_cfg.k

    def named_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for name, p in self.encoder.named_parameters().items():
            params[f"encoder.{name}"] = p
        for name, p in self.bigru1.named_parameters().items():
            params[f"bigru1.{name}"] = p
        for name, p in self.bigru2.named_parameters().items():
            params[f"bigru2.{name}"] = p
        params["start.w"] = self.start_w
        params["start.b"] = self.start_b
        params["end.w"] = self.end_w
        params["end.b"] = self.end_b
        if self.type_w is not None:
            params["type.w"] = self.type_w
            params["type.b"] = self.type_b
        return params

    def zero_grads(self) -> None:
        for p in self.named_parameters().values():
            p.grad = None

    # -- forward pieces ------------------------------------------------------

    def build_g(
        self,
        ctx: DialogueContext,
        window: Window,
        vocab: Vocabulary,
        *,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Stack the 2k+1 passage feature blocks row-wise.

        Block order: current question, history questions (most recent first),
        history answers (most recent first). Missing and flag-disabled slots
        contribute zero blocks, which keeps shapes independent of the turn.
        """
        cfg = self.cmc_cfg
        if len(ctx.prev_questions) != cfg.k or len(ctx.prev_answers) != cfg.k:
            raise ConfigError(
                f"context carries {len(ctx.prev_questions)} question and "
                f"{len(ctx.prev_answers)} answer slots; model expects k={cfg.k}"
            )

        def enc(text: str) -> Tensor:
            return encode_pair(
                text,
                window,
                vocab,
                self.encoder,
                max_seq_len=self.max_seq_len,
                max_query_len=self.max_query_len,
                train=train,
                rng=rng,
            )

        current = enc(ctx.question)
        tlen = current.shape[1]
        zero = lambda: Tensor(np.zeros((self.hidden, tlen)))

        blocks = [current]
        for q in ctx.prev_questions:
            use = cfg.use_question_history and q is not None
            blocks.append(enc(q) if use else zero())
        for a in ctx.prev_answers:
            use = cfg.use_answer_history and a is not None
            blocks.append(enc(a) if use else zero())
        return ad.concat_rows(blocks)

    def start_distribution(self, g: Tensor, m1: Tensor) -> Tensor:
        logits = self.start_w @ ad.concat_rows([g, m1]) + self.start_b
        return ad.softmax(logits, axis=1)

    def end_distribution(self, g: Tensor, m1: Tensor) -> tuple[Tensor, Tensor]:
        m2 = self.bigru2(m1)
        logits = self.end_w @ ad.concat_rows([g, m2]) + self.end_b
        return ad.softmax(logits, axis=1), m2

    def type_distribution(self, g: Tensor, m2: Tensor, end_index: int) -> Tensor:
        """4-way answer-type distribution read off at the span's end token."""
        if self.type_w is None:
            raise RuntimeError("model was built without an answer-type head")
        tlen = g.shape[1]
        if not 0 <= end_index < tlen:
            raise IndexError(f"end index {end_index} out of range for T={tlen}")
        column = ad.select_columns(ad.concat_rows([g, m2]), [end_index])
        return ad.softmax(self.type_w @ column + self.type_b, axis=0)

    def forward_window(
        self,
        ctx: DialogueContext,
        window: Window,
        vocab: Vocabulary,
        *,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> WindowOutput:
        g = self.build_g(ctx, window, vocab, train=train, rng=rng)
        m1 = self.bigru1(g)
        p_start = self.start_distribution(g, m1)
        p_end, m2 = self.end_distribution(g, m1)
        return WindowOutput(p_start, p_end, g, m2, window)

    # -- loss ------------------------------------------------------------------

    def batch_loss(
        self,
        items: list[tuple[WindowOutput, int, int, AnswerType | None]],
        type_loss_enabled: bool = False,
    ) -> tuple[Tensor, int, int]:
        """Mean span NLL over usable examples, plus mean answer-type
        cross-entropy when enabled.

        Items whose gold index falls outside the window (a windowing artifact)
        are skipped and counted, never silently dropped.

        Returns (loss, n_used, n_skipped).
        """
        span_terms: list[Tensor] = []
        type_terms: list[Tensor] = []
        skipped = 0
        for out, y_start, y_end, y_type in items:
            tlen = out.T
            if not (0 <= y_start < tlen and 0 <= y_end < tlen):
                skipped += 1
                continue
            nll_s = -ad.tsum(ad.log(ad.select_columns(out.p_start, [y_start])))
            nll_e = -ad.tsum(ad.log(ad.select_columns(out.p_end, [y_end])))
            span_terms.append(nll_s + nll_e)
            if type_loss_enabled:
                if y_type is None:
                    raise ValueError("type loss enabled but gold type missing")
                p_type = self.type_distribution(out.g, out.m2, y_end)
                picked = ad.gather_rows(p_type, [TYPE_INDEX[y_type]])
                type_terms.append(-ad.tsum(ad.log(picked)))
        if not span_terms:
            raise ValueError(
                f"no usable examples in batch ({skipped} skipped: gold span outside window)"
            )
        n = len(span_terms)
        total = span_terms[0]
        for term in span_terms[1:]:
            total = total + term
        loss = total * (1.0 / n)
        if type_terms:
            type_total = type_terms[0]
            for term in type_terms[1:]:
                type_total = type_total + term
            loss = loss + type_total * (1.0 / n)
        return loss, n, skipped
