"""Command-line interface.

Subcommands: train, detect, serve, eval, index-build, vocab-add,
export-embeddings, fixtures. The pipeline config file is given with
--config or the YZR_CONFIG environment variable. Usage errors exit 2,
runtime errors exit 1.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import evalharness, fixtures, pipeline, trainer
from .augmentor import AugmentPolicy, train_max_ops, valid_max_ops
from .encoder import EncoderConfig, load_params, save_params
from .latentindex import build_index
from .normalizer import RawChat
from .tokenizer import VocabKind, load_vocabulary

logger = logging.getLogger(__name__)


class SystemExit2(Exception):
    """Usage error: exits with status 2."""


def _load_tokens(path: str) -> list[str]:
    vocab = load_vocabulary(path, VocabKind.SAFE_PLATFORM)
    return sorted(vocab.entries)


def _require_config(args) -> pipeline.PipelineConfig:
    path = args.config or os.environ.get(pipeline.ENV_CONFIG)
    if not path:
        raise SystemExit2(f"--config or ${pipeline.ENV_CONFIG} is required")
    cfg = pipeline.load_config(path)
    if args.threshold is not None:
        cfg = dataclasses.replace(cfg, threshold=args.threshold)
    return cfg


def _read_kv_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def cmd_train(args) -> int:
    # file values first, command-line flags override
    file_cfg = _read_kv_file(args.train_config) if args.train_config else {}

    def setting(flag_value, key, cast, default):
        if flag_value is not None:
            return flag_value
        if key in file_cfg:
            return cast(file_cfg[key])
        return default

    tokens = _load_tokens(args.tokens)
    enc_cfg = EncoderConfig(
        embed_dim=setting(args.embed_dim, "embed_dim", int, 32),
        hidden_dim=setting(args.hidden_dim, "hidden_dim", int, 128),
        dropout_rate=setting(args.dropout, "dropout_rate", float, 0.2),
    )
    seed = setting(args.seed, "seed", int, 0)
    p_delete = float(file_cfg.get("p_delete", 0.5))
    train_cfg = trainer.TrainConfig(
        batch_size=setting(args.batch_size, "batch_size", int, 256),
        epochs=setting(args.epochs, "epochs", int, 300),
        lr0=setting(args.lr, "lr0", float, 1e-4),
        temperature=setting(args.temperature, "temperature", float, 0.07),
        split_fraction=setting(args.split, "split_fraction", float, 0.7),
        seed=seed,
        policy_train=AugmentPolicy(p_delete=p_delete, max_ops=train_max_ops, rng_seed=seed),
        policy_valid=AugmentPolicy(p_delete=p_delete, max_ops=valid_max_ops, rng_seed=seed),
    )
    params, history = trainer.fit(tokens, enc_cfg, train_cfg)
    save_params(params, args.out)
    if args.history:
        history.to_csv(args.history)
    print(
        f"trained on {len(tokens)} tokens: best val loss "
        f"{history.best_val_loss:.6f} at epoch {history.best_epoch}; weights -> {args.out}"
    )
    return 0


def cmd_detect(args) -> int:
    detector = pipeline.Detector.from_config(_require_config(args))
    for lineno, line in enumerate(sys.stdin):
        text = line.rstrip("\n")
        verdict = detector.detect(RawChat(id=str(lineno), text=text))
        print(json.dumps(verdict.to_wire()))
    return 0


def cmd_serve(args) -> int:
    cfg = _require_config(args)
    detector = pipeline.Detector.from_config(cfg)
    listen = args.listen or cfg.listen
    host, _, port = listen.rpartition(":")
    if not host or not port.isdigit():
        raise SystemExit2(f"--listen must be HOST:PORT, got {listen!r}")
    server = pipeline.DetectionServer((host, int(port)), detector)
    print(f"listening on {server.server_address[0]}:{server.server_address[1]}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return 0


def cmd_eval(args) -> int:
    cfg = _require_config(args)
    detector = pipeline.Detector.from_config(cfg)
    dataset = evalharness.load_labeled_csv(args.data)
    reports = []
    if args.baseline:
        reports.append(evalharness.regex_baseline(dataset, detector.vocabs, detector.norm_cfg))
    if args.sweep:
        thresholds = sorted(float(v) for v in args.sweep.split(","))
        reports.extend(evalharness.threshold_sweep(dataset, detector, thresholds))
    if not args.baseline and not args.sweep:
        reports.append(evalharness.evaluate(dataset, detector, cfg.threshold))
    for report in reports:
        print(report.render())
    if args.report_csv:
        with open(args.report_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["model", "threshold", "class", "precision", "recall", "f1", "tp", "fp", "fn", "tn"]
            )
            for report in reports:
                for name, m in (
                    ("profane", report.profane),
                    ("not_profane", report.not_profane),
                ):
                    writer.writerow(
                        [
                            report.model,
                            report.threshold,
                            name,
                            repr(m.precision),
                            repr(m.recall),
                            repr(m.f1),
                            report.tp,
                            report.fp,
                            report.fn,
                            report.tn,
                        ]
                    )
    return 0


def cmd_index_build(args) -> int:
    cfg = _require_config(args)
    if not cfg.profane_vocab or not cfg.weights:
        raise SystemExit2("config must set profane_vocab and weights")
    vocab = load_vocabulary(cfg.profane_vocab, VocabKind.PROFANE)
    params = load_params(cfg.weights)
    index = build_index(sorted(vocab.entries), params, cfg.hnsw)
    index.save(args.out)
    print(f"indexed {len(index)} profane keys -> {args.out}")
    return 0


def cmd_vocab_add(args) -> int:
    cfg = _require_config(args)
    if not cfg.profane_vocab:
        raise SystemExit2("config must set profane_vocab")
    detector = pipeline.Detector.from_config(cfg)
    normalized = detector.add_profane_key(args.key)
    with open(cfg.profane_vocab, "a", encoding="utf-8") as fh:
        fh.write(normalized + "\n")
    if cfg.index and detector.index is not None:
        detector.index.save(cfg.index)
    print(f"added profane key {normalized!r} (no retraining)")
    return 0


def cmd_export_embeddings(args) -> int:
    params = load_params(args.weights)
    tokens = _load_tokens(args.tokens)
    rows = evalharness.export_embeddings(tokens, params, args.out)
    print(f"wrote {rows} embeddings -> {args.out}")
    return 0


def cmd_fixtures(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = fixtures.CorpusSpec(
        n_safe=args.n_safe,
        n_profane=args.n_profane,
        len_range=(args.len_min, args.len_max),
        seed=args.seed,
    )
    safe, profane = fixtures.generate_corpus(spec)
    (out / "safe_english.txt").write_text("\n".join(safe) + "\n", encoding="utf-8")
    (out / "profane.txt").write_text("\n".join(profane) + "\n", encoding="utf-8")
    (out / "train_tokens.txt").write_text("\n".join(safe + profane) + "\n", encoding="utf-8")
    chats = fixtures.generate_labeled_chats(safe, profane, n_chats=args.chats, seed=spec.seed)
    evalharness.save_labeled_csv(out / "labeled_chats.csv", chats)
    print(
        f"wrote {len(safe)} safe tokens, {len(profane)} profane keys, "
        f"{args.chats} labeled chats -> {out}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chatscreen", description=__doc__)
    parser.add_argument("--config", help="pipeline config file (key = value)")
    parser.add_argument("--threshold", type=float, help="override the match threshold")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the encoder on a tokens file")
    p.add_argument("tokens")
    p.add_argument("--out", required=True, help="weights file to write")
    p.add_argument("--history", help="per-epoch CSV to write")
    p.add_argument("--train-config", help="key = value file; flags override it")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--split", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--dropout", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="one chat per stdin line -> one verdict per line")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("serve", help="newline-delimited JSON detection service over TCP")
    p.add_argument("--listen", help="HOST:PORT (default from config)")
    p.add_argument("--workers", type=int, default=None, help="accepted for config parity")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("eval", help="score a labeled CSV (text,label)")
    p.add_argument("--data", required=True)
    p.add_argument("--baseline", action="store_true", help="regex token-equality baseline")
    p.add_argument("--sweep", help="comma-separated thresholds")
    p.add_argument("--report-csv", help="also write a machine-readable report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("index-build", help="build the nearest-neighbor index file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index_build)

    p = sub.add_parser("vocab-add", help="add a profane key live: no retraining")
    p.add_argument("key")
    p.set_defaults(func=cmd_vocab_add)

    p = sub.add_parser("export-embeddings", help="tokens file -> CSV of 64-dim vectors")
    p.add_argument("tokens")
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("fixtures", help="write a synthetic corpus + labeled chats")
    p.add_argument("--out", required=True)
    p.add_argument("--n-safe", type=int, default=450)
    p.add_argument("--n-profane", type=int, default=50)
    p.add_argument("--len-min", type=int, default=3)
    p.add_argument("--len-max", type=int, default=12)
    p.add_argument("--chats", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fixtures)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except SystemExit2 as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (KeyboardInterrupt, BrokenPipeError):
        return 1
    except Exception as exc:  # runtime failures exit 1 with a diagnostic
        logger.debug("unhandled error", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
