"""Fine-tuning loop: Adam with warmup + linear decay, seeded determinism,
and checkpointing of the best and final parameters."""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_model, save_model
from .data import Corpus, Dialogue, HistoryMode, build_context, derive_gold_span
from .model import AnswerType, CMCModel, DialogueContext
from .tokenizer import (
    ConfigError,
    DEFAULT_DOC_STRIDE,
    Vocabulary,
    Window,
    tokenize,
    windows,
)

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 3e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_fraction: float = 0.1
    epochs: int = 2
    batch_size: int = 8
    seed: int = 13
    k: int = 2
    dataset_mode: str = "quac"
    doc_stride: int = DEFAULT_DOC_STRIDE
    use_question_history: bool = True
    use_answer_history: bool = True
    decoupled_weight_decay: bool = True
    clip_norm: float | None = 1.0  # global gradient-norm clip, as in stock BERT fine-tuning
    max_paragraph_chars: int | None = None  # optional long-paragraph filter
    max_steps: int | None = None

    def __post_init__(self):
        if not 0 < self.warmup_fraction < 1:
            raise ConfigError(f"warmup_fraction must be in (0, 1), got {self.warmup_fraction}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.dataset_mode not in ("quac", "coqa"):
            raise ConfigError(f"dataset_mode must be quac or coqa, got {self.dataset_mode!r}")


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear ramp 0 -> lr over the first ceil(warmup_fraction * total)
    steps, then linear decay lr -> 0 at total_steps."""
    if step > total_steps:
        raise ValueError(f"step {step} past total_steps {total_steps}")
    warmup = math.ceil(cfg.warmup_fraction * total_steps)
    if step <= warmup:
        return cfg.lr * (step / max(warmup, 1))
    return cfg.lr * ((total_steps - step) / max(total_steps - warmup, 1))


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def clip_gradients(params: dict, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


def adam_step(
    params: dict[str, np.ndarray | object],
    state: OptimizerState,
    lr: float,
    cfg: TrainConfig,
) -> None:
    """One bias-corrected Adam update over `params` (name -> Tensor).

    Weight decay is decoupled by default (subtracted straight from the
    parameter rather than folded into the gradient); `decoupled_weight_decay`
    switches to classic L2-in-gradient for comparison.
    """
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter '{name}' at step {t}")
        if not cfg.decoupled_weight_decay and cfg.weight_decay:
            g = g + cfg.weight_decay * p.data
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = cfg.beta1 * state.m[name] + (1 - cfg.beta1) * g
        v = state.v[name] = cfg.beta2 * state.v[name] + (1 - cfg.beta2) * g * g
        m_hat = m / (1 - cfg.beta1**t)
        v_hat = v / (1 - cfg.beta2**t)
        update = lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        if cfg.decoupled_weight_decay and cfg.weight_decay:
            update = update + lr * cfg.weight_decay * p.data
        p.data = p.data - update


@dataclass
class TrainExample:
    dialogue_id: str
    turn: int
    window: Window
    ctx: DialogueContext
    start: int  # window-local gold indices
    end: int
    answer_type: AnswerType


def _char_to_token_span(
    alignment: list[tuple[int, int]], char_start: int, char_end: int
) -> tuple[int, int] | None:
    starts = [i for i, (b, e) in enumerate(alignment) if e > char_start]
    ends = [i for i, (b, e) in enumerate(alignment) if b < char_end]
    if not starts or not ends or starts[0] > ends[-1]:
        return None
    return starts[0], ends[-1]


def _gold_token_span(
    dialogue: Dialogue,
    turn_idx: int,
    tokens: list[str],
    alignment: list[tuple[int, int]],
    dataset_mode: str,
) -> tuple[int, int] | None:
    turn = dialogue.turns[turn_idx - 1]
    if dataset_mode == "quac":
        if turn.span is None:
            return None
        return _char_to_token_span(alignment, *turn.span)
    # CoQA: maximum-F1 token span against the abstractive answer, searched
    # inside the rationale window, falling back to the rationale itself.
    rationale = None
    if turn.span is not None:
        rationale = _char_to_token_span(alignment, *turn.span)
    if turn.answer_type is not AnswerType.SPAN:
        return rationale
    derived = derive_gold_span(tokens, turn.answer_texts[0], rationale)
    return derived if derived is not None else rationale


def build_training_examples(
    corpus: Corpus,
    vocab: Vocabulary,
    model: CMCModel,
    cfg: TrainConfig,
) -> tuple[list[TrainExample], dict[str, int]]:
    """One example per (turn, window) whose gold span lies in the window.

    Gold history is used throughout (training condition); turns whose gold
    span cannot be derived and windows that miss the span are counted.
    """
    capacity = model.max_seq_len - model.max_query_len - 3
    stride = min(cfg.doc_stride, capacity)
    examples: list[TrainExample] = []
    skipped = {"no_gold_span": 0, "window_missed": 0, "long_paragraph": 0}
    for dialogue in corpus.dialogues:
        if cfg.max_paragraph_chars and len(dialogue.paragraph) > cfg.max_paragraph_chars:
            skipped["long_paragraph"] += len(dialogue.turns)
            continue
        tokens, alignment = tokenize(dialogue.paragraph, vocab)
        if not tokens:
            continue
        wins = windows(tokens, capacity, stride)
        for i in range(1, len(dialogue.turns) + 1):
            gold = _gold_token_span(dialogue, i, tokens, alignment, cfg.dataset_mode)
            if gold is None:
                skipped["no_gold_span"] += 1
                continue
            ctx = build_context(
                dialogue,
                i,
                model.k,
                HistoryMode.GOLD,
                use_question_history=cfg.use_question_history,
                use_answer_history=cfg.use_answer_history,
            )
            hit = False
            for win in wins:
                local_s = gold[0] - win.origin
                local_e = gold[1] - win.origin
                if 0 <= local_s and local_e < len(win):
                    hit = True
                    examples.append(
                        TrainExample(
                            dialogue_id=dialogue.id,
                            turn=i,
                            window=win,
                            ctx=ctx,
                            start=local_s,
                            end=local_e,
                            answer_type=dialogue.turns[i - 1].answer_type,
                        )
                    )
            if not hit:
                skipped["window_missed"] += 1
    return examples, skipped


def train(
    corpus: Corpus,
    model: CMCModel,
    vocab: Vocabulary,
    cfg: TrainConfig,
    out_dir,
    *,
    probe=None,
    probe_every: int = 0,
) -> dict:
    """Run the fine-tuning loop; writes train_log.jsonl, model_best.npz and
    model_final.npz under out_dir.

    `probe(step, model) -> bool` (optional, every `probe_every` steps) can
    stop training early; it must not consume the training RNG.
    """
    if not corpus.dialogues:
        raise ValueError("empty corpus")
    os.makedirs(out_dir, exist_ok=True)
    examples, skipped = build_training_examples(corpus, vocab, model, cfg)
    if not examples:
        raise ValueError(f"no trainable examples (skipped: {skipped})")
    logger.info("training on %d examples (skipped: %s)", len(examples), skipped)

    rng = np.random.default_rng(cfg.seed)
    type_loss = cfg.dataset_mode == "coqa" and model.has_type_head
    steps_per_epoch = math.ceil(len(examples) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    if cfg.max_steps is not None:
        total_steps = min(total_steps, cfg.max_steps)

    state = OptimizerState()
    params = model.named_parameters()
    losses: list[float] = []
    best_loss = math.inf
    step = 0
    log_path = os.path.join(out_dir, "train_log.jsonl")
    best_path = os.path.join(out_dir, "model_best.npz")
    final_path = os.path.join(out_dir, "model_final.npz")
    stop = False
    with open(log_path, "w", encoding="utf-8") as log:
        for _ in range(cfg.epochs):
            if stop:
                break
            order = rng.permutation(len(examples))
            for lo in range(0, len(examples), cfg.batch_size):
                if step >= total_steps or stop:
                    break
                batch = [examples[j] for j in order[lo : lo + cfg.batch_size]]
                model.zero_grads()
                items = []
                for ex in batch:
                    out = model.forward_window(ex.ctx, ex.window, vocab, train=True, rng=rng)
                    items.append((out, ex.start, ex.end, ex.answer_type))
                loss, _, _ = model.batch_loss(items, type_loss_enabled=type_loss)
                loss.backward()
                if cfg.clip_norm is not None:
                    clip_gradients(params, cfg.clip_norm)
                step += 1
                lr = lr_at(step, total_steps, cfg)
                adam_step(params, state, lr, cfg)
                loss_val = loss.item()
                if not math.isfinite(loss_val):
                    raise FloatingPointError(f"non-finite loss {loss_val} at step {step}")
                losses.append(loss_val)
                log.write(json.dumps({"step": step, "lr": lr, "loss": loss_val}) + "\n")
                if loss_val < best_loss:
                    best_loss = loss_val
                    save_model(model, vocab, cfg.dataset_mode, best_path)
                if probe is not None and probe_every and step % probe_every == 0:
                    if probe(step, model):
                        stop = True
    save_model(model, vocab, cfg.dataset_mode, final_path)
    return {
        "losses": losses,
        "steps": step,
        "skipped": skipped,
        "best": best_path,
        "final": final_path,
        "best_loss": best_loss,
    }


def checkpoint_roundtrip(model: CMCModel, vocab: Vocabulary, dataset_mode: str, path) -> CMCModel:
    """Save, reload, and verify bit-exact parameters; returns the reload."""
    save_model(model, vocab, dataset_mode, path)
    reloaded, _, _ = load_model(path)
    before = model.named_parameters()
    after = reloaded.named_parameters()
    for name in before:
        if not np.array_equal(before[name].data, after[name].data):
            raise AssertionError(f"checkpoint roundtrip changed parameter '{name}'")
    return reloaded
