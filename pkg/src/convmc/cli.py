"""Command-line entry points: train, eval, predict, serve, gradcheck."""
from __future__ import annotations

import argparse
import json
import sys

from . import gradcheck, metrics
from .data import HistoryMode, load_coqa, load_corpus, load_quac
from .encoder import EncoderConfig
from .model import CMCConfig, CMCModel
from .pipeline import Predictor
from .tokenizer import DEFAULT_MAX_QUERY_LEN, DEFAULT_MAX_SEQ_LEN, Vocabulary
from .training import TrainConfig, train

MODEL_KEYS = ("hidden", "layers", "heads", "ff_dim", "max_positions", "dropout")
PACK_KEYS = ("max_seq_len", "max_query_len")


def _load_dataset(path: str, dataset: str):
    if dataset == "quac":
        return load_quac(path)
    if dataset == "coqa":
        return load_coqa(path)
    return load_corpus(path)  # internal cache format


def _read_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def cmd_train(args) -> int:
    file_cfg = _read_config(args.config)
    train_kwargs = {
        k: v for k, v in file_cfg.items() if k not in MODEL_KEYS + PACK_KEYS
    }
    train_kwargs["dataset_mode"] = args.dataset
    for key in ("k", "epochs", "batch_size", "lr", "seed", "max_steps"):
        val = getattr(args, key)
        if val is not None:
            train_kwargs[key] = val
    if args.no_question_history:
        train_kwargs["use_question_history"] = False
    if args.no_answer_history:
        train_kwargs["use_answer_history"] = False
    if args.paragraph_filter is not None:
        train_kwargs["max_paragraph_chars"] = args.paragraph_filter
    cfg = TrainConfig(**train_kwargs)

    corpus = _load_dataset(args.data, args.dataset)
    if args.vocab:
        vocab = Vocabulary.load(args.vocab)
    else:
        vocab = Vocabulary.build(corpus.all_text())

    enc_kwargs = {k: file_cfg[k] for k in MODEL_KEYS if k in file_cfg}
    pack_kwargs = {k: file_cfg[k] for k in PACK_KEYS if k in file_cfg}
    pack_kwargs.setdefault("max_seq_len", DEFAULT_MAX_SEQ_LEN)
    pack_kwargs.setdefault("max_query_len", DEFAULT_MAX_QUERY_LEN)
    enc_kwargs.setdefault("max_positions", pack_kwargs["max_seq_len"])
    model = CMCModel(
        EncoderConfig(vocab_size=len(vocab), **enc_kwargs),
        CMCConfig(
            k=cfg.k,
            use_question_history=cfg.use_question_history,
            use_answer_history=cfg.use_answer_history,
        ),
        type_head=(args.dataset == "coqa"),
        seed=cfg.seed,
        **pack_kwargs,
    )
    result = train(corpus, model, vocab, cfg, args.out)
    print(
        f"trained {result['steps']} steps, best loss {result['best_loss']:.4f}, "
        f"checkpoints in {args.out}"
    )
    return 0


def _eval_records(args):
    predictor = Predictor.from_checkpoint(args.checkpoint)
    corpus = _load_dataset(args.data, predictor.dataset_mode)
    human = metrics.read_human_scores(args.human_scores) if args.human_scores else None
    return predictor.evaluate(
        corpus,
        history=HistoryMode(args.history),
        k=args.k,
        use_question_history=not args.no_question_history,
        use_answer_history=not args.no_answer_history,
        human_scores=human,
    )


def cmd_eval(args) -> int:
    records, _ = _eval_records(args)
    with_heq = all(r.human_f1 is not None for r in records) and bool(records)
    print(metrics.format_report(metrics.aggregate(records), "overall"))
    print()
    print(metrics.format_report(metrics.aggregate(records, "domain"), "domain"))
    print()
    print(
        metrics.format_report(
            metrics.aggregate(records, "turn", drop_sparse_turns=args.drop_sparse_turns),
            "turn",
        )
    )
    if with_heq:
        heq_q, heq_d = metrics.heq(records)
        print(f"\nHEQ-Q\t{heq_q:.1f}\nHEQ-D\t{heq_d:.1f}")
    if args.report:
        summary = metrics.summary_dict(
            records, drop_sparse_turns=args.drop_sparse_turns, with_heq=with_heq
        )
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
        print(f"\nsummary written to {args.report}")
    return 0


def cmd_predict(args) -> int:
    _, rows = _eval_records(args)
    out_rows = [
        {k: row[k] for k in ("dialogue_id", "turn", "answer", "type")} for row in rows
    ]
    metrics.write_predictions(out_rows, args.out)
    print(f"{len(out_rows)} predictions written to {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    predictor = Predictor.from_checkpoint(args.checkpoint)
    app = create_app(predictor, session_ttl=args.session_ttl)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_gradcheck(args) -> int:
    ok = gradcheck.run_suite(args.seed)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convmc")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fine-tune a model on a QuAC/CoQA-format file")
    p.add_argument("--dataset", choices=["quac", "coqa"], required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="flat JSON config (TrainConfig + model keys)")
    p.add_argument("--vocab", help="vocabulary file (default: built from the corpus)")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-steps", dest="max_steps", type=int, default=None)
    p.add_argument("--no-question-history", action="store_true")
    p.add_argument("--no-answer-history", action="store_true")
    p.add_argument("--paragraph-filter", type=int, default=None,
                   help="skip dialogues whose paragraph exceeds this many characters")
    p.set_defaults(func=cmd_train)

    for name, fn in (("eval", cmd_eval), ("predict", cmd_predict)):
        p = sub.add_parser(name)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--history", choices=["gold", "predicted"], default="gold")
        p.add_argument("--k", type=int, default=None)
        p.add_argument("--no-question-history", action="store_true")
        p.add_argument("--no-answer-history", action="store_true")
        if name == "eval":
            p.add_argument("--human-scores", help="JSONL sidecar with per-question human F1")
            p.add_argument("--report", help="write a JSON summary here")
            p.add_argument("--drop-sparse-turns", action="store_true",
                           help="drop per-turn buckets with under 100 questions")
        else:
            p.add_argument("--out", required=True)
            p.set_defaults(human_scores=None)
        p.set_defaults(func=fn)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--session-ttl", dest="session_ttl", type=float, default=3600.0)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
