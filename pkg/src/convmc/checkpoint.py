"""Versioned checkpoints: named float64 arrays plus a JSON metadata blob.

The container is an .npz archive; float64 arrays round-trip bit-exactly.
Metadata carries the model configs, the dataset mode, and the vocabulary, so
a checkpoint alone is enough to reconstruct the full predictor.
"""
from __future__ import annotations

import json
import zipfile

import numpy as np

from .encoder import EncoderConfig
from .model import CMCConfig, CMCModel
from .tokenizer import Vocabulary

CHECKPOINT_VERSION = 1

_VERSION_KEY = "__format_version__"
_META_KEY = "__meta__"


class CheckpointError(RuntimeError):
    pass


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    payload = {
        _VERSION_KEY: np.asarray(CHECKPOINT_VERSION),
        _META_KEY: np.asarray(json.dumps(meta)),
    }
    for name, arr in arrays.items():
        payload["param/" + name] = np.asarray(arr, dtype=np.float64)
    np.savez(path, **payload)


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        archive = np.load(path)
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    with archive:
        if _VERSION_KEY not in archive:
            raise CheckpointError(f"{path} is not a checkpoint (no version field)")
        version = int(archive[_VERSION_KEY])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
            )
        meta = json.loads(str(archive[_META_KEY]))
        arrays = {
            name[len("param/"):]: archive[name]
            for name in archive.files
            if name.startswith("param/")
        }
    return arrays, meta


def save_model(model: CMCModel, vocab: Vocabulary, dataset_mode: str, path) -> None:
    meta = {
        "dataset_mode": dataset_mode,
        "encoder": {
            "vocab_size": model.encoder_cfg.vocab_size,
            "hidden": model.encoder_cfg.hidden,
            "layers": model.encoder_cfg.layers,
            "heads": model.encoder_cfg.heads,
            "ff_dim": model.encoder_cfg.ff_dim,
            "max_positions": model.encoder_cfg.max_positions,
            "dropout": model.encoder_cfg.dropout,
        },
        "cmc": {
            "k": model.cmc_cfg.k,
            "use_question_history": model.cmc_cfg.use_question_history,
            "use_answer_history": model.cmc_cfg.use_answer_history,
            "num_types": model.cmc_cfg.num_types,
            "max_answer_len": model.cmc_cfg.max_answer_len,
        },
        "type_head": model.has_type_head,
        "max_seq_len": model.max_seq_len,
        "max_query_len": model.max_query_len,
        "vocab": vocab.tokens,
    }
    arrays = {name: p.data for name, p in model.named_parameters().items()}
    save_arrays(path, arrays, meta)


def load_model(path) -> tuple[CMCModel, Vocabulary, dict]:
    """Rebuild (model, vocab, meta) from a checkpoint, bit-exactly."""
    arrays, meta = load_arrays(path)
    try:
        vocab = Vocabulary(meta["vocab"])
        model = CMCModel(
            EncoderConfig(**meta["encoder"]),
            CMCConfig(**meta["cmc"]),
            type_head=meta["type_head"],
            max_seq_len=meta["max_seq_len"],
            max_query_len=meta["max_query_len"],
        )
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"checkpoint metadata incomplete: {exc}") from None
    load_into_model(model, arrays)
    return model, vocab, meta


def load_into_model(model: CMCModel, arrays: dict[str, np.ndarray]) -> None:
    params = model.named_parameters()
    missing = sorted(set(params) - set(arrays))
    unknown = sorted(set(arrays) - set(params))
    if missing or unknown:
        raise CheckpointError(
            f"parameter names do not match: missing={missing[:3]} unknown={unknown[:3]}"
        )
    for name in sorted(params):
        if params[name].data.shape != arrays[name].shape:
            raise CheckpointError(
                f"shape mismatch for '{name}': checkpoint {arrays[name].shape} "
                f"vs model {params[name].data.shape}"
            )
    for name, p in params.items():
        p.data = arrays[name].astype(np.float64, copy=True)
        p.grad = None
