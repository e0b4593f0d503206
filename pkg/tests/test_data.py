"""Corpus loaders, gold-span derivation vs exhaustive search, contexts."""
import json

import numpy as np
import pytest

from convmc.data import (
    Corpus,
    DataError,
    Dialogue,
    HistoryMode,
    SequencingError,
    Turn,
    build_context,
    derive_gold_span,
    load_coqa,
    load_corpus,
    load_quac,
    save_corpus,
)
from convmc.decoding import CANNOTANSWER
from convmc.metrics import token_f1
from convmc.model import AnswerType
from convmc.tokenizer import Vocabulary, tokenize


def quac_fixture(tmp_path, human=False):
    context = "Max the cat sat on the red mat. He then went to sleep."
    qa1 = {
        "id": "d0#q1",
        "question": "Where did Max sit?",
        "answers": [
            {"text": "on the red mat", "answer_start": context.index("on the red")},
            {"text": "the red mat", "answer_start": context.index("the red")},
        ],
    }
    qa2 = {
        "id": "d0#q2",
        "question": "What color was his collar?",
        "answers": [{"text": CANNOTANSWER, "answer_start": -1}],
    }
    if human:
        qa1["human_f1"] = 0.9
        qa2["human_f1"] = 0.8
    doc = {
        "data": [
            {
                "title": "Max",
                "paragraphs": [{"id": "d0", "context": context, "qas": [qa1, qa2]}],
            }
        ]
    }
    path = tmp_path / "quac.json"
    path.write_text(json.dumps(doc))
    return path


def coqa_fixture(tmp_path):
    story = "Anna keeps three hens. They lay brown eggs every single day."
    doc = {
        "data": [
            {
                "id": "c1",
                "source": "wikipedia",
                "story": story,
                "questions": [
                    {"input_text": "How many hens?", "turn_id": 1},
                    {"input_text": "Do they lay eggs?", "turn_id": 2},
                    {"input_text": "What is her dog called?", "turn_id": 3},
                ],
                "answers": [
                    {
                        "input_text": "three",
                        "span_start": story.index("keeps"),
                        "span_end": story.index("hens") + 4,
                        "turn_id": 1,
                    },
                    {
                        "input_text": "yes",
                        "span_start": story.index("They"),
                        "span_end": len(story),
                        "turn_id": 2,
                    },
                    {"input_text": "unknown", "span_start": -1, "span_end": -1, "turn_id": 3},
                ],
                "additional_answers": {
                    "0": [
                        {"input_text": "3", "turn_id": 1},
                        {"input_text": "yes", "turn_id": 2},
                        {"input_text": "unknown", "turn_id": 3},
                    ]
                },
            }
        ]
    }
    path = tmp_path / "coqa.json"
    path.write_text(json.dumps(doc))
    return path


class TestLoadQuac:
    def test_shapes_and_sentinel(self, tmp_path):
        corpus = load_quac(quac_fixture(tmp_path))
        assert corpus.dataset == "quac"
        assert len(corpus) == 1
        dlg = corpus.dialogues[0]
        assert len(dlg.turns) == 2
        assert dlg.paragraph.endswith(CANNOTANSWER)

    def test_gold_span_matches_paragraph_substring(self, tmp_path):
        dlg = load_quac(quac_fixture(tmp_path)).dialogues[0]
        t1 = dlg.turns[0]
        assert dlg.paragraph[t1.span[0] : t1.span[1]] == t1.answer_texts[0]
        assert len(t1.answer_texts) == 2

    def test_cannotanswer_span_is_sentinel(self, tmp_path):
        dlg = load_quac(quac_fixture(tmp_path)).dialogues[0]
        t2 = dlg.turns[1]
        assert t2.answer_type is AnswerType.UNANSWERABLE
        assert dlg.paragraph[t2.span[0] : t2.span[1]] == CANNOTANSWER

    def test_char_to_token_roundtrip_f1(self, tmp_path):
        # gold char span -> token span -> text has token F1 1.0 vs original
        dlg = load_quac(quac_fixture(tmp_path)).dialogues[0]
        vocab = Vocabulary.build([dlg.paragraph])
        tokens, spans = tokenize(dlg.paragraph, vocab)
        cs, ce = dlg.turns[0].span
        tok_s = next(i for i, (b, e) in enumerate(spans) if e > cs)
        tok_e = max(i for i, (b, e) in enumerate(spans) if b < ce)
        recovered = dlg.paragraph[spans[tok_s][0] : spans[tok_e][1]]
        assert token_f1(recovered, dlg.turns[0].answer_texts[0]) == 1.0

    def test_malformed_json_names_path(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{nope")
        with pytest.raises(DataError, match="invalid JSON"):
            load_quac(path)

    def test_missing_field_names_path(self, tmp_path):
        path = tmp_path / "missing.json"
        path.write_text(json.dumps({"data": [{"paragraphs": [{"qas": []}]}]}))
        with pytest.raises(DataError, match=r"\$\.data\[0\]\.paragraphs\[0\]\.context"):
            load_quac(path)

    def test_human_f1_read_when_present(self, tmp_path):
        dlg = load_quac(quac_fixture(tmp_path, human=True)).dialogues[0]
        assert dlg.turns[0].human_f1 == 0.9


class TestLoadCoqa:
    def test_types_and_source(self, tmp_path):
        corpus = load_coqa(coqa_fixture(tmp_path))
        dlg = corpus.dialogues[0]
        assert [t.answer_type for t in dlg.turns] == [
            AnswerType.SPAN,
            AnswerType.YES,
            AnswerType.UNANSWERABLE,
        ]
        assert dlg.source == "wikipedia"
        assert dlg.turns[2].span is None

    def test_additional_answers_kept(self, tmp_path):
        dlg = load_coqa(coqa_fixture(tmp_path)).dialogues[0]
        assert dlg.turns[0].answer_texts == ["three", "3"]

    def test_domain_partition_counts(self, tmp_path):
        corpus = load_coqa(coqa_fixture(tmp_path))
        by_source = {}
        for dlg in corpus.dialogues:
            by_source.setdefault(dlg.source, 0)
            by_source[dlg.source] += 1
        assert sum(by_source.values()) == len(corpus)


def brute_force_gold_span(tokens, answer, window):
    lo, hi = window if window else (0, len(tokens) - 1)
    best = None
    for s in range(lo, hi + 1):
        for e in range(s, hi + 1):
            f1 = token_f1(" ".join(tokens[s : e + 1]), answer)
            length = e - s + 1
            if f1 == 0:
                continue
            if best is None or f1 > best[0] or (f1 == best[0] and length < best[1]):
                best = (f1, length, s, e)
    return None if best is None else (best[2], best[3])


class TestDeriveGoldSpan:
    def test_exact_phrase(self):
        tokens = "the cat sat on the mat".split()
        span = derive_gold_span(tokens, "cat sat")
        assert span == (1, 2)
        assert token_f1("cat sat", " ".join(tokens[1:3])) == 1.0

    def test_full_sentence_verbatim(self):
        tokens = "birds fly south every winter".split()
        assert derive_gold_span(tokens, "birds fly south every winter") == (0, 4)

    def test_respects_rationale_window(self):
        tokens = "apple pie . apple tart".split()
        assert derive_gold_span(tokens, "apple", (3, 4)) == (3, 3)

    def test_zero_overlap_returns_none(self):
        assert derive_gold_span("aa bb cc".split(), "zz") is None

    def test_matches_brute_force_on_random_fixtures(self):
        rng = np.random.default_rng(7)
        words = ["ant", "bee", "cow", "dog", "elk", "fox", "the", "a"]
        for _ in range(120):
            n = int(rng.integers(3, 14))
            tokens = [words[i] for i in rng.integers(0, len(words), n)]
            m = int(rng.integers(1, 4))
            answer = " ".join(words[i] for i in rng.integers(0, len(words), m))
            if rng.random() < 0.5:
                lo = int(rng.integers(0, n))
                hi = int(rng.integers(lo, n))
                window = (lo, hi)
            else:
                window = None
            assert derive_gold_span(tokens, answer, window) == brute_force_gold_span(
                tokens, answer, window
            ), (tokens, answer, window)

    def test_empty_answer_rejected(self):
        with pytest.raises(ValueError):
            derive_gold_span(["a"], "   ")


def toy_dialogue():
    return Dialogue(
        id="d1",
        source="test",
        paragraph="p",
        turns=[
            Turn(question=f"q{i}", answer_texts=[f"a{i}"], span=None)
            for i in range(1, 5)
        ],
    )


class TestBuildContext:
    def test_first_turn_all_null(self):
        ctx = build_context(toy_dialogue(), 1, k=3)
        assert ctx.prev_questions == (None, None, None)
        assert ctx.prev_answers == (None, None, None)

    def test_gold_most_recent_first(self):
        ctx = build_context(toy_dialogue(), 3, k=2)
        assert ctx.question == "q3"
        assert ctx.prev_questions == ("q2", "q1")
        assert ctx.prev_answers == ("a2", "a1")

    def test_predicted_uses_store_not_gold(self):
        store = {("d1", 1): "wrong1", ("d1", 2): "wrong2"}
        ctx = build_context(
            toy_dialogue(), 3, k=2, mode=HistoryMode.PREDICTED, predicted_store=store
        )
        assert ctx.prev_answers == ("wrong2", "wrong1")
        assert ctx.prev_questions == ("q2", "q1")  # questions are always gold

    def test_predicted_out_of_order_fails(self):
        with pytest.raises(SequencingError):
            build_context(
                toy_dialogue(), 3, k=2, mode=HistoryMode.PREDICTED, predicted_store={}
            )

    def test_flags_blank_lists(self):
        ctx = build_context(toy_dialogue(), 3, k=2, use_question_history=False)
        assert ctx.prev_questions == (None, None)
        assert ctx.prev_answers == ("a2", "a1")
        ctx = build_context(toy_dialogue(), 3, k=2, use_answer_history=False)
        assert ctx.prev_answers == (None, None)

    def test_turn_out_of_range(self):
        with pytest.raises(IndexError):
            build_context(toy_dialogue(), 5, k=1)


class TestCorpusCache:
    def test_roundtrip(self, tmp_path):
        corpus = load_quac(quac_fixture(tmp_path))
        cache = tmp_path / "cache.json"
        save_corpus(corpus, cache)
        again = load_corpus(cache)
        assert again.dataset == corpus.dataset
        assert again.dialogues == corpus.dialogues

    def test_version_check(self, tmp_path):
        cache = tmp_path / "old.json"
        cache.write_text(json.dumps({"version": 0, "dataset": "quac", "dialogues": []}))
        with pytest.raises(DataError, match="version"):
            load_corpus(cache)
