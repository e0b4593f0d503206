"""QuAC/CoQA-format ingestion, extractive gold spans, and dialogue contexts.

Loaders accept the official JSON shapes (the documented subset). QuAC
paragraphs get the CANNOTANSWER sentinel appended so unanswerability is a
span; CoQA turns carry the rationale span and an answer type inferred from
the abstractive answer text.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

from .decoding import CANNOTANSWER
from .metrics import normalize
from .model import AnswerType, DialogueContext


class DataError(ValueError):
    """Malformed input file; the message names the path into the document."""


class SequencingError(RuntimeError):
    """Predicted-history access before the prediction exists."""


class HistoryMode(str, Enum):
    GOLD = "gold"
    PREDICTED = "predicted"


@dataclass
class Turn:
    question: str
    answer_texts: list[str]  # >= 1 reference
    span: tuple[int, int] | None  # char offsets (QuAC answer / CoQA rationale)
    answer_type: AnswerType = AnswerType.SPAN
    human_f1: float | None = None


@dataclass
class Dialogue:
    id: str
    source: str
    paragraph: str
    turns: list[Turn] = field(default_factory=list)


@dataclass
class Corpus:
    dataset: str  # "quac" | "coqa"
    dialogues: list[Dialogue] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.dialogues)

    def all_text(self):
        """Every text field, for vocabulary building."""
        for dlg in self.dialogues:
            yield dlg.paragraph
            for turn in dlg.turns:
                yield turn.question
                for ans in turn.answer_texts:
                    yield ans


def _get(obj, key, path: str):
    try:
        return obj[key]
    except (KeyError, IndexError, TypeError):
        raise DataError(f"missing or malformed field at {path}.{key}") from None


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON in {path}: {exc}") from None


def load_quac(path) -> Corpus:
    """QuAC JSON: data -> paragraphs -> qas, answers with text+answer_start.

    The sentinel is appended to every paragraph; answers whose text is the
    sentinel get their span repointed at it. All reference answers are kept.
    A non-standard per-question "human_f1" field is read when present.
    """
    doc = _read_json(path)
    dialogues = []
    for a, article in enumerate(_get(doc, "data", "$")):
        apath = f"$.data[{a}]"
        for p, para in enumerate(_get(article, "paragraphs", apath)):
            ppath = f"{apath}.paragraphs[{p}]"
            context = _get(para, "context", ppath)
            if not context.rstrip().endswith(CANNOTANSWER):
                context = context.rstrip() + " " + CANNOTANSWER
            sentinel_start = len(context) - len(CANNOTANSWER)
            turns = []
            for q, qa in enumerate(_get(para, "qas", ppath)):
                qpath = f"{ppath}.qas[{q}]"
                question = _get(qa, "question", qpath)
                answers = _get(qa, "answers", qpath)
                if not answers:
                    raise DataError(f"empty answers at {qpath}")
                texts = []
                for x, ans in enumerate(answers):
                    texts.append(_get(ans, "text", f"{qpath}.answers[{x}]"))
                first = answers[0]
                text0 = texts[0]
                if text0 == CANNOTANSWER:
                    span = (sentinel_start, len(context))
                    atype = AnswerType.UNANSWERABLE
                else:
                    start = int(_get(first, "answer_start", f"{qpath}.answers[0]"))
                    span = (start, start + len(text0))
                    if context[span[0] : span[1]] != text0:
                        raise DataError(
                            f"answer text does not match paragraph at {qpath}.answers[0]"
                        )
                    atype = AnswerType.SPAN
                turns.append(
                    Turn(
                        question=question,
                        answer_texts=texts,
                        span=span,
                        answer_type=atype,
                        human_f1=qa.get("human_f1"),
                    )
                )
            did = para.get("id") or f"{article.get('title', 'quac')}_{a}_{p}"
            dialogues.append(
                Dialogue(id=did, source=article.get("title", ""), paragraph=context, turns=turns)
            )
    return Corpus(dataset="quac", dialogues=dialogues)


_COQA_TYPE = {"yes": AnswerType.YES, "no": AnswerType.NO, "unknown": AnswerType.UNANSWERABLE}


def load_coqa(path) -> Corpus:
    """CoQA JSON: data entries with story, questions, answers (span_start,
    span_end, input_text) and a source domain tag.

    Answer types come from the abstractive answer: yes/no/unknown map to the
    non-span types, everything else is a span. The rationale span is kept as
    the turn's char span (absent for unknowns).
    """
    doc = _read_json(path)
    dialogues = []
    for i, entry in enumerate(_get(doc, "data", "$")):
        epath = f"$.data[{i}]"
        story = _get(entry, "story", epath)
        questions = _get(entry, "questions", epath)
        answers = _get(entry, "answers", epath)
        if len(questions) != len(answers):
            raise DataError(f"questions/answers length mismatch at {epath}")
        extra = entry.get("additional_answers", {})
        turns = []
        for t, (qq, aa) in enumerate(zip(questions, answers)):
            qpath = f"{epath}.questions[{t}]"
            question = _get(qq, "input_text", qpath)
            answer_text = _get(aa, "input_text", f"{epath}.answers[{t}]")
            texts = [answer_text]
            for ans_set in extra.values():
                if t < len(ans_set):
                    alt = ans_set[t].get("input_text")
                    if alt:
                        texts.append(alt)
            atype = _COQA_TYPE.get(answer_text.strip().lower(), AnswerType.SPAN)
            s0 = int(aa.get("span_start", -1))
            s1 = int(aa.get("span_end", -1))
            span = (s0, s1) if 0 <= s0 < s1 <= len(story) else None
            turns.append(
                Turn(question=question, answer_texts=texts, span=span, answer_type=atype)
            )
        dialogues.append(
            Dialogue(
                id=str(_get(entry, "id", epath)),
                source=entry.get("source", ""),
                paragraph=story,
                turns=turns,
            )
        )
    return Corpus(dataset="coqa", dialogues=dialogues)


def derive_gold_span(
    paragraph_tokens: list[str],
    abstractive_answer: str,
    rationale_window: tuple[int, int] | None = None,
) -> tuple[int, int] | None:
    """Token span with maximum token-F1 overlap against the answer text.

    Searches inside the rationale window (token indices, inclusive) or the
    whole paragraph when absent. Ties prefer the shortest span, then the
    earliest. Returns None when every span has zero overlap.
    """
    if not abstractive_answer.strip():
        raise ValueError("empty abstractive answer")
    n = len(paragraph_tokens)
    if n == 0:
        return None
    lo, hi = rationale_window if rationale_window is not None else (0, n - 1)
    lo, hi = max(0, lo), min(n - 1, hi)
    if lo > hi:
        return None
    answer_pieces = normalize(abstractive_answer)
    answer_counts = Counter(answer_pieces)
    answer_len = len(answer_pieces)

    best = None  # (f1, length, start, end)
    for s in range(lo, hi + 1):
        running: Counter = Counter()
        run_len = 0
        for e in range(s, hi + 1):
            for piece in normalize(paragraph_tokens[e]):
                running[piece] += 1
                run_len += 1
            # token_f1 conventions, incl. both-normalize-to-empty -> 1.0
            if answer_len == 0 and run_len == 0:
                f1 = 1.0
            elif answer_len == 0 or run_len == 0:
                continue
            else:
                same = sum((running & answer_counts).values())
                if same == 0:
                    continue
                precision = same / run_len
                recall = same / answer_len
                f1 = 2 * precision * recall / (precision + recall)
            length = e - s + 1
            if best is None or f1 > best[0] or (f1 == best[0] and length < best[1]):
                best = (f1, length, s, e)
    if best is None:
        return None
    return best[2], best[3]


def build_context(
    dialogue: Dialogue,
    turn_index: int,
    k: int,
    mode: HistoryMode = HistoryMode.GOLD,
    predicted_store: dict[tuple[str, int], str] | None = None,
    *,
    use_question_history: bool = True,
    use_answer_history: bool = True,
) -> DialogueContext:
    """Context for 1-based turn `turn_index`: the k most recent previous
    questions and answers, gold or model-predicted per `mode`. Slots before
    the first turn are None; disabled history lists are all None.
    """
    if not 1 <= turn_index <= len(dialogue.turns):
        raise IndexError(
            f"turn {turn_index} out of range for dialogue with {len(dialogue.turns)} turns"
        )
    questions: list[str | None] = []
    answers: list[str | None] = []
    for l in range(1, k + 1):
        j = turn_index - l
        if j < 1:
            questions.append(None)
            answers.append(None)
            continue
        prev = dialogue.turns[j - 1]
        questions.append(prev.question if use_question_history else None)
        if not use_answer_history:
            answers.append(None)
        elif mode is HistoryMode.GOLD:
            answers.append(prev.answer_texts[0])
        else:
            if predicted_store is None or (dialogue.id, j) not in predicted_store:
                raise SequencingError(
                    f"predicted answer for ({dialogue.id}, turn {j}) not available; "
                    "turns must be processed in order"
                )
            answers.append(predicted_store[(dialogue.id, j)])
    return DialogueContext(
        question=dialogue.turns[turn_index - 1].question,
        prev_questions=tuple(questions),
        prev_answers=tuple(answers),
        turn=turn_index,
    )


# -- corpus cache ---------------------------------------------------------------

CACHE_VERSION = 1


def save_corpus(corpus: Corpus, path) -> None:
    doc = {
        "version": CACHE_VERSION,
        "dataset": corpus.dataset,
        "dialogues": [
            {
                "id": d.id,
                "source": d.source,
                "paragraph": d.paragraph,
                "turns": [
                    {
                        "question": t.question,
                        "answers": t.answer_texts,
                        "span": list(t.span) if t.span else None,
                        "type": t.answer_type.value,
                        "human_f1": t.human_f1,
                    }
                    for t in d.turns
                ],
            }
            for d in corpus.dialogues
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_corpus(path) -> Corpus:
    doc = _read_json(path)
    if doc.get("version") != CACHE_VERSION:
        raise DataError(f"corpus cache version {doc.get('version')} unsupported")
    dialogues = []
    for d in doc["dialogues"]:
        turns = [
            Turn(
                question=t["question"],
                answer_texts=t["answers"],
                span=tuple(t["span"]) if t["span"] else None,
                answer_type=AnswerType(t["type"]),
                human_f1=t["human_f1"],
            )
            for t in d["turns"]
        ]
        dialogues.append(
            Dialogue(id=d["id"], source=d["source"], paragraph=d["paragraph"], turns=turns)
        )
    return Corpus(dataset=doc["dataset"], dialogues=dialogues)
