"""Conversational machine comprehension at desk scale.

A paragraph is encoded once per conditioning text (the current question, each
previous question, each previous answer) by a shared micro-transformer; the
stacked passage features feed two BiGRUs and span/type heads, and answers are
decoded by a constrained best-span search.
"""

from .autodiff import Tensor, no_grad
from .checkpoint import load_model, save_model
from .data import (
    Corpus,
    Dialogue,
    HistoryMode,
    Turn,
    build_context,
    derive_gold_span,
    load_coqa,
    load_quac,
)
from .decoding import CANNOTANSWER, DecodedAnswer, aggregate_windows, dp_best_span, finalize
from .encoder import EncoderConfig, EncoderWeights, encode, encode_pair, extract_paragraph_features
from .metrics import EvalRecord, aggregate, heq, normalize, question_f1, token_f1
from .model import AnswerType, CMCConfig, CMCModel, DialogueContext, SpanLogits
from .pipeline import Predictor
from .tokenizer import PackedSequence, Vocabulary, Window, pack, span_to_text, tokenize, windows
from .training import TrainConfig, adam_step, lr_at, train

__version__ = "0.1.0"
