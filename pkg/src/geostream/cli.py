"""Command-line entry points: train, eval, predict, serve, make-synth, grad-check.

Every subcommand accepts ``--config FILE`` (flat key=value pairs); explicit
flags override environment variables (``GEOSTREAM_*``), which override the
file, which overrides defaults. Exit status is 0 on success, nonzero with a
one-line reason otherwise.
"""

from __future__ import annotations

import argparse
import random
import sys

from .data import (LabeledExample, build_dataset, gen_synthetic, parse_tweet,
                   serialize_prediction, serialize_tweet)
from .embeddings import WordVectorStore, load_word_vectors
from .gazetteer import load_gazetteer
from .model import ALL_FEATURES, GeoModel, ModelConfig
from .stream import (PipelineConfig, VirtualClock, apply_env, coerce_config,
                     parse_config_file, run_pipeline)
from .training import TrainConfig, evaluate, grad_check, train


class CliError(Exception):
    """Fatal subcommand failure; the message becomes the one-line reason."""


def _load_store(args, word_dim: int, trainable: bool) -> WordVectorStore:
    if getattr(args, "vectors", None):
        return load_word_vectors(args.vectors, limit=getattr(args, "vector_limit", None),
                                 seed=args.vector_seed, trainable=trainable)
    return WordVectorStore(word_dim, seed=args.vector_seed, trainable=trainable)


def _split_dev(examples: list[LabeledExample], frac: float, seed: int):
    order = list(range(len(examples)))
    random.Random(seed).shuffle(order)
    n_dev = int(len(examples) * frac)
    dev = [examples[i] for i in order[:n_dev]]
    tr = [examples[i] for i in order[n_dev:]]
    return tr, dev


def cmd_train(args) -> int:
    gaz = load_gazetteer(args.cities)
    cfg = ModelConfig(
        num_classes=len(gaz),
        word_dim=args.word_dim, char_dim=args.char_dim, rnn_hidden=args.hidden,
        time_feat_dim=args.time_dim, acct_feat_dim=args.acct_dim,
        fusion_hidden=args.fusion_hidden, max_text_tokens=args.max_text_tokens,
        max_loc_chars=args.max_loc_chars,
        embeddings_trainable=not args.freeze_embeddings,
        features=tuple(args.features.split(",")),
    )
    store = _load_store(args, cfg.word_dim, cfg.embeddings_trainable)
    examples, stats = build_dataset(args.data, gaz)
    if not examples:
        raise CliError(f"no labeled examples in {args.data} "
                       f"(lines={stats.lines}, parse_errors={stats.parse_errors})")
    train_data, dev_data = _split_dev(examples, args.dev_frac, args.seed) \
        if args.dev_frac > 0 else (examples, None)
    print(f"dataset: {len(examples)} examples "
          f"({stats.non_geotagged} non-geotagged, {stats.outside_cities} outside, "
          f"{stats.parse_errors} parse errors); train={len(train_data)} "
          f"dev={len(dev_data or [])}", file=sys.stderr)
    model = GeoModel(cfg, store, seed=args.seed)
    tcfg = TrainConfig(batch_size=args.batch_size, learning_rate=args.lr,
                       max_epochs=args.epochs, patience=args.patience, seed=args.seed)
    print("epoch,mean_loss,train_acc,dev_acc")
    train(model, train_data, tcfg, dev_data=dev_data, log=print)
    model.save(args.out)
    print(f"checkpoint written to {args.out}", file=sys.stderr)
    if args.out_vectors:
        store.save(args.out_vectors)
        print(f"vectors written to {args.out_vectors}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    gaz = load_gazetteer(args.cities)
    model_cfg = GeoModel.load_config(args.checkpoint)
    store = _load_store(args, model_cfg.word_dim, model_cfg.embeddings_trainable)
    model = GeoModel.load(args.checkpoint, store)
    examples, _ = build_dataset(args.data, gaz)
    if not examples:
        raise CliError(f"no labeled examples in {args.data}")
    report = evaluate(model, examples)
    print(report.table())
    for line in report.lines():
        print(line)
    return 0


def cmd_predict(args) -> int:
    gaz = load_gazetteer(args.cities)
    model_cfg = GeoModel.load_config(args.checkpoint)
    store = _load_store(args, model_cfg.word_dim, model_cfg.embeddings_trainable)
    model = GeoModel.load(args.checkpoint, store)
    records = []
    skipped = 0
    with open(args.input, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                records.append(parse_tweet(line))
            except Exception:
                skipped += 1
    if not records:
        raise CliError(f"no parseable tweets in {args.input}")
    predictions, errors = model.predict_batch(records, gaz, seed=args.seed)
    out = open(args.out, "w", encoding="utf-8") if args.out != "-" else sys.stdout
    try:
        for pred in predictions:
            if pred is not None:
                name = gaz[pred.label_id].name
                out.write(serialize_prediction(pred, name) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    print(f"predicted {sum(p is not None for p in predictions)} tweets "
          f"({skipped} unparseable lines, {len(errors)} prediction errors)", file=sys.stderr)
    return 0


def cmd_serve(args) -> int:
    cfg = _pipeline_config(args)
    clock = VirtualClock() if args.virtual_clock else None
    counters = run_pipeline(cfg, clock=clock, counter_sink=sys.stderr)
    return 0 if counters.consistent() else 1


def cmd_make_synth(args) -> int:
    gaz = load_gazetteer(args.cities)
    examples = gen_synthetic(gaz, args.per_city, args.noise, args.seed)
    rng = random.Random(args.seed + 1)
    out = open(args.out, "w", encoding="utf-8") if args.out != "-" else sys.stdout
    try:
        for ex in examples:
            rec = ex.tweet
            if args.predictable_frac > 0 and rng.random() < args.predictable_frac:
                rec.geotag = None  # profile location stays: the predictable case
            out.write(serialize_tweet(rec) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    print(f"wrote {len(examples)} tweets", file=sys.stderr)
    return 0


def cmd_grad_check(args) -> int:
    from .gazetteer import CityEntry, Gazetteer

    entries = [CityEntry(i, f"Checktown{i} CT", (10.0 * i, 10.0 * i + 1.0, 0.0, 1.0))
               for i in range(args.classes)]
    gaz = Gazetteer(entries)
    cfg = ModelConfig(num_classes=len(gaz), word_dim=args.word_dim, char_dim=args.char_dim,
                      rnn_hidden=args.hidden, time_feat_dim=8, acct_feat_dim=8,
                      fusion_hidden=args.fusion_hidden, max_text_tokens=16, max_loc_chars=16)
    store = WordVectorStore(cfg.word_dim, seed=args.vector_seed)
    model = GeoModel(cfg, store, seed=args.seed)
    batch = gen_synthetic(gaz, 1, noise=0.0, seed=args.seed)[: args.examples]
    report = grad_check(model, batch, max_samples=args.samples, seed=args.seed)
    for line in report.lines():
        print(line)
    print(f"max relative error {report.max_rel_err():.3e} over {len(report.entries)} tensors "
          f"(tolerance {report.tol:g})")
    return 0 if report.passed else 1


def _pipeline_config(args) -> PipelineConfig:
    values: dict = {}
    if args.config:
        values.update(parse_config_file(args.config))
    values = apply_env(values)
    for fld in ("checkpoint", "gazetteer", "vectors", "vector_seed", "batch_size",
                "flush_interval", "source", "sink", "seed", "rate"):
        flag = getattr(args, fld, None)
        if flag is not None:
            values[fld] = flag
    values = coerce_config(values)
    if "checkpoint" not in values or "gazetteer" not in values:
        raise CliError("serve requires --checkpoint and --gazetteer (flag, env, or config file)")
    try:
        return PipelineConfig(**values)
    except TypeError as exc:
        raise CliError(f"bad pipeline config: {exc}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geostream",
                                     description="City-level tweet geolocation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_vectors(p):
        p.add_argument("--vectors", help="word-vector text file (optional)")
        p.add_argument("--vector-seed", type=int, default=0, dest="vector_seed")
        p.add_argument("--vector-limit", type=int, default=None, dest="vector_limit")

    p = sub.add_parser("train", help="train a model on a geotagged NDJSON archive")
    p.add_argument("--data", required=True)
    p.add_argument("--cities", required=True, help="gazetteer CSV")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--out-vectors", default=None, help="write fine-tuned vectors here")
    add_vectors(p)
    p.add_argument("--word-dim", type=int, default=300)
    p.add_argument("--char-dim", type=int, default=50)
    p.add_argument("--hidden", type=int, default=100)
    p.add_argument("--time-dim", type=int, default=32)
    p.add_argument("--acct-dim", type=int, default=32)
    p.add_argument("--fusion-hidden", type=int, default=400)
    p.add_argument("--max-text-tokens", type=int, default=64)
    p.add_argument("--max-loc-chars", type=int, default=32)
    p.add_argument("--features", default=",".join(ALL_FEATURES))
    p.add_argument("--freeze-embeddings", action="store_true")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--dev-frac", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a geotagged archive")
    p.add_argument("--data", required=True)
    p.add_argument("--cities", required=True)
    p.add_argument("--checkpoint", required=True)
    add_vectors(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict one batch over an NDJSON file")
    p.add_argument("--input", required=True)
    p.add_argument("--cities", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--seed", type=int, default=0)
    add_vectors(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("serve", help="run the streaming prediction pipeline")
    p.add_argument("--config", default=None, help="flat key=value config file")
    p.add_argument("--checkpoint")
    p.add_argument("--gazetteer")
    p.add_argument("--vectors")
    p.add_argument("--vector-seed", type=int, default=None, dest="vector_seed")
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--flush-interval", type=float, default=None, dest="flush_interval")
    p.add_argument("--source", default=None)
    p.add_argument("--sink", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--rate", type=float, default=None, help="paced replay, tweets/minute")
    p.add_argument("--virtual-clock", action="store_true",
                   help="deterministic clock (pacing advances instantly)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("make-synth", help="generate a deterministic synthetic corpus")
    p.add_argument("--cities", required=True)
    p.add_argument("--per-city", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")
    p.add_argument("--predictable-frac", type=float, default=0.0,
                   help="fraction of tweets emitted without their geotag")
    p.set_defaults(func=cmd_make_synth)

    p = sub.add_parser("grad-check", help="finite-difference check of all gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vector-seed", type=int, default=0, dest="vector_seed")
    p.add_argument("--examples", type=int, default=2)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--word-dim", type=int, default=12)
    p.add_argument("--char-dim", type=int, default=8)
    p.add_argument("--hidden", type=int, default=6)
    p.add_argument("--fusion-hidden", type=int, default=16)
    p.add_argument("--samples", type=int, default=200)
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # resource/validation failures become one-liners
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
