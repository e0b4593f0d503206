"""Token-overlap F1, human-equivalence scores, and report aggregation.

Normalization follows the usual extractive-QA convention: lowercase, strip
punctuation, drop articles, split on whitespace.
"""
from __future__ import annotations

import json
import math
import re
import string
from collections import Counter, defaultdict
from dataclasses import dataclass

_PUNCT = set(string.punctuation)
_ARTICLES = re.compile(r"\b(a|an|the)\b")


def normalize(text: str) -> list[str]:
    """Lowercase, remove punctuation, drop articles, split on whitespace."""
    text = text.lower()
    text = "".join(ch for ch in text if ch not in _PUNCT)
    text = _ARTICLES.sub(" ", text)
    return text.split()


def token_f1(pred: str, ref: str) -> float:
    """Multiset token overlap F1. Two empty strings score 1.0; exactly one
    empty scores 0.0."""
    p = normalize(pred)
    r = normalize(ref)
    if not p and not r:
        return 1.0
    if not p or not r:
        return 0.0
    common = Counter(p) & Counter(r)
    same = sum(common.values())
    if same == 0:
        return 0.0
    precision = same / len(p)
    recall = same / len(r)
    return 2 * precision * recall / (precision + recall)


def question_f1(pred: str, refs: list[str]) -> float:
    """Max token F1 over the reference answers."""
    if not refs:
        raise ValueError("question_f1 needs at least one reference")
    return max(token_f1(pred, ref) for ref in refs)


@dataclass
class EvalRecord:
    dialogue_id: str
    turn: int
    prediction: str
    references: list[str]
    f1: float
    human_f1: float | None = None
    domain: str = ""


def make_record(
    dialogue_id: str,
    turn: int,
    prediction: str,
    references: list[str],
    human_f1: float | None = None,
    domain: str = "",
) -> EvalRecord:
    return EvalRecord(
        dialogue_id=dialogue_id,
        turn=turn,
        prediction=prediction,
        references=references,
        f1=question_f1(prediction, references),
        human_f1=human_f1,
        domain=domain,
    )


def heq(records: list[EvalRecord]) -> tuple[float, float]:
    """Human-equivalence percentages.

    HEQ-Q: share of questions where model F1 >= human F1.
    HEQ-D: share of dialogues where that holds for every question.
    """
    if not records:
        raise ValueError("heq on an empty record set")
    missing = [(r.dialogue_id, r.turn) for r in records if r.human_f1 is None]
    if missing:
        raise ValueError(f"records missing human F1: {missing}")
    wins = [r.f1 >= r.human_f1 for r in records]
    heq_q = 100.0 * sum(wins) / len(records)
    by_dialogue: dict[str, list[bool]] = defaultdict(list)
    for r, won in zip(records, wins):
        by_dialogue[r.dialogue_id].append(won)
    full = sum(all(ws) for ws in by_dialogue.values())
    heq_d = 100.0 * full / len(by_dialogue)
    return heq_q, heq_d


def aggregate(
    records: list[EvalRecord],
    group_by: str = "overall",
    *,
    drop_sparse_turns: bool = False,
    min_turn_count: int = 100,
) -> dict:
    """Macro-average F1 per group.

    group_by is one of overall / domain / turn. With `drop_sparse_turns`, turn
    buckets with fewer than `min_turn_count` questions are dropped.

    Returns {group_key: (mean_f1, count)}.
    """
    if group_by not in ("overall", "domain", "turn"):
        raise ValueError(f"unknown grouping {group_by!r}")
    groups: dict = defaultdict(list)
    for r in records:
        if group_by == "overall":
            key = "overall"
        elif group_by == "domain":
            key = r.domain
        else:
            key = r.turn
        groups[key].append(r.f1)
    out = {}
    for key in sorted(groups, key=str):
        scores = groups[key]
        if group_by == "turn" and drop_sparse_turns and len(scores) < min_turn_count:
            continue
        # fsum is exactly rounded, so the mean is record-order independent
        out[key] = (math.fsum(scores) / len(scores), len(scores))
    return out


def format_report(groups: dict, title: str) -> str:
    """Tab-separated table: group, mean F1, question count."""
    lines = [f"{title}\tF1\tcount"]
    for key, (score, count) in groups.items():
        lines.append(f"{key}\t{score:.4f}\t{count}")
    return "\n".join(lines)


def summary_dict(
    records: list[EvalRecord], *, drop_sparse_turns: bool = False, with_heq: bool = False
) -> dict:
    """Machine-readable evaluation summary."""
    summary = {
        "overall": aggregate(records)["overall"][0],
        "count": len(records),
        "by_domain": {
            str(k): v[0] for k, v in aggregate(records, "domain").items()
        },
        "by_turn": {
            str(k): v[0]
            for k, v in aggregate(records, "turn", drop_sparse_turns=drop_sparse_turns).items()
        },
    }
    if with_heq:
        heq_q, heq_d = heq(records)
        summary["heq_q"] = heq_q
        summary["heq_d"] = heq_d
    return summary


# -- file interfaces -----------------------------------------------------------


def write_predictions(rows: list[dict], path) -> None:
    """JSON-lines prediction file: dialogue_id, turn, answer, type."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def read_predictions(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            for key in ("dialogue_id", "turn", "answer"):
                if key not in row:
                    raise ValueError(f"prediction line {i} missing '{key}'")
            rows.append(row)
    return rows


def read_human_scores(path) -> dict[tuple[str, int], float]:
    """JSON-lines sidecar {dialogue_id, turn, human_f1} for HEQ."""
    scores = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            scores[(row["dialogue_id"], int(row["turn"]))] = float(row["human_f1"])
    return scores
