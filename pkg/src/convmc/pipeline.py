"""Inference orchestration: paragraph preparation, per-window decoding,
cross-window aggregation, and corpus evaluation in gold or predicted
history mode."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics
from .autodiff import no_grad
from .checkpoint import load_model
from .data import Corpus, Dialogue, HistoryMode, build_context
from .decoding import (
    CANNOTANSWER,
    DecodedAnswer,
    aggregate_windows,
    dp_best_span,
    finalize,
)
from .model import ANSWER_TYPES, AnswerType, CMCModel, DialogueContext, SpanLogits
from .tokenizer import (
    DEFAULT_DOC_STRIDE,
    Vocabulary,
    Window,
    span_to_text,
    tokenize,
    windows,
)


@dataclass
class PreparedParagraph:
    """Tokenized paragraph with its windows; built once per paragraph."""

    text: str  # sentinel-extended for QuAC
    tokens: list[str]
    alignment: list[tuple[int, int]]
    windows: list[Window]
    sentinel_index: int | None  # global token index of CANNOTANSWER, if any


class Predictor:
    """Read-only inference wrapper around a model + vocabulary."""

    def __init__(
        self,
        model: CMCModel,
        vocab: Vocabulary,
        dataset_mode: str,
        *,
        doc_stride: int = DEFAULT_DOC_STRIDE,
    ):
        if dataset_mode not in ("quac", "coqa"):
            raise ValueError(f"dataset_mode must be quac or coqa, got {dataset_mode!r}")
        self.model = model
        self.vocab = vocab
        self.dataset_mode = dataset_mode
        capacity = model.max_seq_len - model.max_query_len - 3
        self.capacity = capacity
        self.doc_stride = min(doc_stride, capacity)

    @classmethod
    def from_checkpoint(cls, path, **kwargs) -> "Predictor":
        model, vocab, meta = load_model(path)
        return cls(model, vocab, meta["dataset_mode"], **kwargs)

    # -- paragraph prep -----------------------------------------------------

    def prepare(self, paragraph: str) -> PreparedParagraph:
        text = paragraph
        if self.dataset_mode == "quac" and not text.rstrip().endswith(CANNOTANSWER):
            text = text.rstrip() + " " + CANNOTANSWER
        tokens, alignment = tokenize(text, self.vocab)
        if not tokens:
            raise ValueError("paragraph has no tokens")
        sentinel = None
        if self.dataset_mode == "quac":
            sentinel = len(tokens) - 1
        wins = windows(tokens, self.capacity, self.doc_stride)
        return PreparedParagraph(text, tokens, alignment, wins, sentinel)

    # -- answering ------------------------------------------------------------

    def window_logits(self, ctx: DialogueContext, window: Window) -> SpanLogits:
        """Detached start/end/type distributions for one window."""
        with no_grad():
            out = self.model.forward_window(ctx, window, self.vocab)
            ps = out.p_start.data[0]
            pe = out.p_end.data[0]
            p_type = None
            if self.model.has_type_head:
                s, e, _ = dp_best_span(ps, pe, self.model.cmc_cfg.max_answer_len)
                p_type = self.model.type_distribution(out.g, out.m2, e).data[:, 0]
        return SpanLogits(ps, pe, p_type, window.origin)

    def answer(self, prepared: PreparedParagraph, ctx: DialogueContext) -> DecodedAnswer:
        per_window = []
        for window in prepared.windows:
            logits = self.window_logits(ctx, window)
            s, e, score = dp_best_span(
                logits.p_start, logits.p_end, self.model.cmc_cfg.max_answer_len
            )
            gs, ge = s + window.origin, e + window.origin
            atype = AnswerType.SPAN
            if logits.p_type is not None:
                atype = ANSWER_TYPES[int(np.argmax(logits.p_type))]
            per_window.append(
                DecodedAnswer(
                    start=s,
                    end=e,
                    global_start=gs,
                    global_end=ge,
                    score=score,
                    text=span_to_text(prepared.text, prepared.alignment, gs, ge),
                    answer_type=atype,
                )
            )
        best = aggregate_windows(per_window)
        return finalize(
            best, self.dataset_mode, unanswerable_index=prepared.sentinel_index
        )

    # -- whole-dialogue / corpus paths ---------------------------------------------

    def predict_dialogue(
        self,
        dialogue: Dialogue,
        *,
        history: HistoryMode = HistoryMode.PREDICTED,
        k: int | None = None,
        use_question_history: bool = True,
        use_answer_history: bool = True,
    ) -> list[DecodedAnswer]:
        """Answers for every turn, in order. In predicted mode each turn's
        context is built from this model's own earlier (finalized) answers."""
        k_eff = self.model.k if k is None else k
        if not 0 <= k_eff <= self.model.k:
            raise ValueError(f"k={k_eff} outside [0, model k={self.model.k}]")
        prepared = self.prepare(dialogue.paragraph)
        store: dict[tuple[str, int], str] = {}
        answers = []
        for i in range(1, len(dialogue.turns) + 1):
            ctx = build_context(
                dialogue,
                i,
                k_eff,
                history,
                predicted_store=store,
                use_question_history=use_question_history,
                use_answer_history=use_answer_history,
            )
            ctx = _pad_context(ctx, self.model.k)
            ans = self.answer(prepared, ctx)
            store[(dialogue.id, i)] = ans.final_text
            answers.append(ans)
        return answers

    def evaluate(
        self,
        corpus: Corpus,
        *,
        history: HistoryMode = HistoryMode.GOLD,
        k: int | None = None,
        use_question_history: bool = True,
        use_answer_history: bool = True,
        human_scores: dict[tuple[str, int], float] | None = None,
    ) -> tuple[list[metrics.EvalRecord], list[dict]]:
        """Score every turn of the corpus; returns (records, prediction rows)."""
        records: list[metrics.EvalRecord] = []
        rows: list[dict] = []
        for dialogue in corpus.dialogues:
            answers = self.predict_dialogue(
                dialogue,
                history=history,
                k=k,
                use_question_history=use_question_history,
                use_answer_history=use_answer_history,
            )
            for i, ans in enumerate(answers, start=1):
                turn = dialogue.turns[i - 1]
                human = turn.human_f1
                if human_scores and (dialogue.id, i) in human_scores:
                    human = human_scores[(dialogue.id, i)]
                records.append(
                    metrics.make_record(
                        dialogue.id,
                        i,
                        ans.final_text,
                        turn.answer_texts,
                        human_f1=human,
                        domain=dialogue.source,
                    )
                )
                rows.append(
                    {
                        "dialogue_id": dialogue.id,
                        "turn": i,
                        "answer": ans.final_text,
                        "type": ans.answer_type.value,
                        "span": [ans.global_start, ans.global_end],
                        "score": ans.score,
                    }
                )
        return records, rows


def _pad_context(ctx: DialogueContext, k: int) -> DialogueContext:
    """Widen a context built with a smaller k to the model's k by appending
    null slots (an eval-time history cap)."""
    missing = k - len(ctx.prev_questions)
    if missing <= 0:
        return ctx
    return DialogueContext(
        question=ctx.question,
        prev_questions=ctx.prev_questions + (None,) * missing,
        prev_answers=ctx.prev_answers + (None,) * missing,
        turn=ctx.turn,
    )
