"""Best-span search and answer finalization.

The span search maximizes p_start[s] * p_end[e] subject to s <= e and a
length cap, in one left-to-right sweep that keeps the best admissible start
in a monotonic deque (O(T)). Ties break toward the smallest start, then the
smallest end, which makes the result reproducible against brute force.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .model import AnswerType

CANNOTANSWER = "CANNOTANSWER"

# CoQA renders non-span answer types as fixed strings in place of the span.
COQA_TYPE_TEXT = {
    AnswerType.YES: "yes",
    AnswerType.NO: "no",
    AnswerType.UNANSWERABLE: "unknown",
}

DATASET_MODES = ("quac", "coqa")


@dataclass(frozen=True)
class DecodedAnswer:
    start: int  # window-local token indices
    end: int
    global_start: int
    global_end: int
    score: float
    text: str
    answer_type: AnswerType = AnswerType.SPAN
    final_text: str | None = None


def dp_best_span(
    p_start: np.ndarray, p_end: np.ndarray, max_answer_len: int
) -> tuple[int, int, float]:
    """(s, e, p_start[s] * p_end[e]) maximizing the product over admissible
    spans: s <= e <= s + max_answer_len - 1."""
    ps = np.asarray(p_start, dtype=np.float64).reshape(-1)
    pe = np.asarray(p_end, dtype=np.float64).reshape(-1)
    if ps.size == 0:
        raise ValueError("empty distributions: T must be >= 1")
    if ps.size != pe.size:
        raise ValueError(f"length mismatch: {ps.size} starts vs {pe.size} ends")
    if max_answer_len < 1:
        raise ValueError(f"max_answer_len must be >= 1, got {max_answer_len}")

    best_s = best_e = 0
    best = -1.0
    starts: deque[int] = deque()  # candidate starts, p_start non-increasing
    for e in range(ps.size):
        while starts and ps[starts[-1]] < ps[e]:
            starts.pop()
        starts.append(e)
        while starts[0] < e - max_answer_len + 1:
            starts.popleft()
        s = starts[0]
        score = ps[s] * pe[e]
        if score > best or (score == best and s < best_s):
            best, best_s, best_e = score, s, e
    return best_s, best_e, float(best)


def aggregate_windows(answers: list[DecodedAnswer]) -> DecodedAnswer:
    """The highest-scoring window wins; ties go to the earliest window."""
    if not answers:
        raise ValueError("no window answers to aggregate")
    best = answers[0]
    for cand in answers[1:]:
        if cand.score > best.score:
            best = cand
    return best


def finalize(
    answer: DecodedAnswer,
    dataset_mode: str,
    *,
    unanswerable_index: int | None = None,
) -> DecodedAnswer:
    """Apply the dataset's answer-text convention.

    CoQA: non-span types replace the span text with yes/no/unknown.
    QuAC: a span covering the appended CANNOTANSWER sentinel token (its global
    index is `unanswerable_index`) becomes the unanswerable marker.

    Idempotent: finalizing an already-final answer changes nothing.
    """
    if dataset_mode not in DATASET_MODES:
        raise ValueError(f"unknown dataset mode {dataset_mode!r}")
    if dataset_mode == "coqa":
        text = COQA_TYPE_TEXT.get(answer.answer_type, answer.text)
        return replace(answer, final_text=text)
    covers_sentinel = (
        unanswerable_index is not None
        and answer.global_start <= unanswerable_index <= answer.global_end
    )
    if covers_sentinel:
        return replace(
            answer, answer_type=AnswerType.UNANSWERABLE, final_text=CANNOTANSWER
        )
    return replace(answer, final_text=answer.text)
