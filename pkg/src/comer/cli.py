"""Command-line entry point: train, eval, predict, bench.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric abort,
5 checkpoint checksum/validation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .belief import state_to_json
from .data import DataError, Dialogue, load_corpus, corpus_vocabulary
from .embeddings import (EmbeddingError, EmbeddingTable, TokenUnit,
                         build_pseudo_table, load_embedding_file)
from .evalbench import benchmark_inference, metrics
from .hiergen import Instrumentation, TurnInput, track_dialogue
from .model import ComerModel, ModelConfig
from .training import (CheckpointError, NumericError, TrainConfig,
                       evaluate_model, load_checkpoint, save_checkpoint, train)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_CHECKPOINT = 5


class ConfigError(Exception):
    pass


_TRAIN_KEYS = {
    "corpus", "format", "validation_corpus",
    "d_m", "d_e", "dropout", "learning_rate", "clip_norm", "optimizer",
    "batch_size", "epochs", "seed", "early_stop_jg",
    "attention_order", "block_grad", "move_dropout",
    "embeddings", "embed_seed",
    "checkpoint_out", "metrics_out",
}


def _load_config(path: str) -> dict:
    try:
        with open(path) as f:
            cfg = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed config JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - _TRAIN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _build_table(source: str, seed: int, d_e: int, dialogues: list[Dialogue]) -> EmbeddingTable:
    if source == "pseudo":
        words, units = corpus_vocabulary(dialogues)
        return build_pseudo_table(words, [TokenUnit(s, k) for s, k in units], d_e, seed)
    return load_embedding_file(source)


def _table_spec(source: str, seed: int, d_e: int, dialogues: list[Dialogue]) -> dict:
    if source == "pseudo":
        words, units = corpus_vocabulary(dialogues)
        return {"kind": "pseudo", "seed": seed, "d_e": d_e,
                "words": words, "units": [list(u) for u in units]}
    return {"kind": "file", "path": str(Path(source).resolve())}


def table_from_spec(spec: dict) -> EmbeddingTable:
    if spec["kind"] == "pseudo":
        return build_pseudo_table(
            spec["words"], [TokenUnit(s, k) for s, k in spec["units"]],
            spec["d_e"], spec["seed"],
        )
    return load_embedding_file(spec["path"])


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    corpus_path = cfg.get("corpus")
    if not corpus_path:
        raise ConfigError("config must name a corpus")
    dialogues = load_corpus(corpus_path, cfg.get("format", "canonical"))
    if not dialogues:
        raise DataError(f"corpus {corpus_path} is empty")
    validation = None
    if cfg.get("validation_corpus"):
        validation = load_corpus(cfg["validation_corpus"], cfg.get("format", "canonical"))

    seed = int(cfg.get("seed", args.seed or 0))
    d_e = int(cfg.get("d_e", 1024))
    source = cfg.get("embeddings", args.embeddings or "pseudo")
    embed_seed = int(cfg.get("embed_seed", 0))
    table = _build_table(source, embed_seed, d_e, dialogues)

    try:
        model_cfg = ModelConfig(
            d_m=int(cfg.get("d_m", 512)),
            d_e=table.d_e,
            dropout=float(cfg.get("dropout", 0.5)),
            attention_order=tuple(cfg.get("attention_order", ("belief", "sys", "usr"))),
            block_grad=bool(cfg.get("block_grad", True)),
            move_dropout=bool(cfg.get("move_dropout", False)),
        )
        train_cfg = TrainConfig(
            d_m=model_cfg.d_m,
            dropout=model_cfg.dropout,
            learning_rate=float(cfg.get("learning_rate", 0.0005)),
            clip_norm=float(cfg.get("clip_norm", 2.0)),
            optimizer=cfg.get("optimizer", "adam"),
            batch_size=int(cfg.get("batch_size", 32)),
            epochs=int(cfg.get("epochs", 150)),
            seed=seed,
            early_stop_jg=cfg.get("early_stop_jg"),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None

    result = train(train_cfg, model_cfg, dialogues, table, validation)

    out = cfg.get("checkpoint_out", "comer.ckpt")
    extra = {"embedding_spec": _table_spec(source, embed_seed, d_e, dialogues),
             "best_epoch": result.best_epoch, "best_jg": result.best_jg}
    save_checkpoint(result.model, out, extra=extra)
    history = [vars(m) for m in result.history]
    if cfg.get("metrics_out"):
        with open(cfg["metrics_out"], "w") as f:
            json.dump({"history": history, "best_epoch": result.best_epoch,
                       "best_jg": result.best_jg}, f, indent=1)
    payload = {"checkpoint": str(out), "best_epoch": result.best_epoch,
               "best_jg": result.best_jg, "epochs_run": len(history)}
    print(json.dumps(payload) if args.json else
          f"trained {len(history)} epochs, best jg {result.best_jg:.4f} "
          f"(epoch {result.best_epoch}) -> {out}")
    return EXIT_OK


def _load_model(args) -> tuple[ComerModel, EmbeddingTable]:
    model, header = load_checkpoint(args.checkpoint)
    spec = header.get("embedding_spec")
    if spec is None:
        raise CheckpointError("checkpoint carries no embedding spec")
    return model, table_from_spec(spec)


def cmd_eval(args) -> int:
    dialogues = load_corpus(args.corpus, args.format)
    if args.oracle:
        golds = [t.state for d in dialogues for t in d.turns]
        report = metrics(golds, golds)
    else:
        model, table = _load_model(args)
        report = evaluate_model(model, table, dialogues, state_feed=args.state_feed)
    print(json.dumps(report.to_json()))
    return EXIT_OK


def cmd_predict(args) -> int:
    dialogues = load_corpus(args.corpus, args.format)
    if len(dialogues) != 1:
        raise DataError(f"predict expects exactly one dialogue, got {len(dialogues)}")
    model, table = _load_model(args)
    turns = [TurnInput(user=t.user, system=t.system) for t in dialogues[0].turns]
    instrument = Instrumentation() if args.attention else None
    preds = track_dialogue(turns, model, table, state_feed=args.state_feed,
                           instrument=instrument)
    rows = []
    for pred in preds:
        row = {"state": state_to_json(pred.state)}
        if args.attention:
            row["attention"] = pred.attention_dumps
        rows.append(row)
    print(json.dumps({"turns": rows}))
    return EXIT_OK


def cmd_bench(args) -> int:
    dialogues = load_corpus(args.corpus, args.format)
    model, table = _load_model(args)
    try:
        inflation = [int(x) for x in args.inflation.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad --inflation list {args.inflation!r}") from None
    if not inflation:
        raise ConfigError("--inflation must name at least one level")
    report = benchmark_inference(model, table, dialogues, inflation, repeats=args.repeats)
    print(json.dumps(report.to_json()) if args.json else report.text_table())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="comer",
                                     description="Hierarchical belief-state tracker")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a JSON config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--embeddings", default=None, help="'pseudo' or an embedding file")
    p_train.add_argument("--json", action="store_true")
    p_train.set_defaults(func=cmd_train)

    def eval_like(p):
        p.add_argument("--checkpoint", required=False)
        p.add_argument("--corpus", required=True)
        p.add_argument("--format", choices=("woz", "multiwoz", "canonical"),
                       default="canonical")
        p.add_argument("--state-feed", choices=("gold", "predicted"),
                       default="predicted", dest="state_feed")
        p.add_argument("--json", action="store_true")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    eval_like(p_eval)
    p_eval.add_argument("--oracle", action="store_true",
                        help="score the gold states against themselves")
    p_eval.set_defaults(func=cmd_eval)

    p_pred = sub.add_parser("predict", help="predict belief states for one dialogue")
    eval_like(p_pred)
    p_pred.add_argument("--attention", action="store_true",
                        help="include per-step attention score dumps")
    p_pred.set_defaults(func=cmd_predict)

    p_bench = sub.add_parser("bench", help="latency benchmark across ontology sizes")
    eval_like(p_bench)
    p_bench.add_argument("--inflation", default="3,35",
                         help="comma-separated registered slot counts")
    p_bench.add_argument("--repeats", type=int, default=5)
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("eval", "predict", "bench") and not args.checkpoint \
                and not getattr(args, "oracle", False):
            raise ConfigError("--checkpoint is required")
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, EmbeddingError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
