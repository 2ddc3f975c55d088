"""``docrel`` command line: vocab, prepare, train, eval, predict.

Every option can come from a flat JSON config (``--config run.json``) and be
overridden on the command line with ``--key value``.  Exit codes: 0 ok,
2 input/config error, 3 checkpoint mismatch, 4 numeric failure.
"""

import argparse
import json
import logging
import random
import sys
from dataclasses import fields
from pathlib import Path

from . import checkpoint as ckpt
from .corpus import PairInstance, RelationSchema, enumerate_pairs, load_docred, load_triples
from .encoding import assemble, collate, read_cache, was_truncated, write_cache
from .errors import ConfigError, DocrelError, InputError
from .metrics import EpochReport, format_report, plot_reports
from .model import EVAL, ModelConfig, forward, predict
from .tokenizer import Vocab, build_vocab, split_text
from .training import TrainConfig, evaluate, train, write_log_records

log = logging.getLogger("docrel")

DEFAULTS = {
    # paths
    "data": None,
    "format": "docred",
    "schema": None,
    "vocab": None,
    "cache": None,
    "val_cache": None,
    "checkpoint": None,
    "output_dir": "runs",
    # data preparation
    "min_freq": 1,
    "max_len": 512,
    "negative_policy": "sampled:3",
    # model
    "d_model": 768,
    "n_layers": 12,
    "n_heads": 12,
    "d_ff": 0,
    "dropout_p": 0.3,
    "layernorm_eps": 1e-12,
    # training
    "batch_size": 32,
    "epochs": 3,
    "learning_rate": 1e-3,
    "beta1": 0.9,
    "beta2": 0.999,
    "adam_eps": 1e-8,
    "grad_clip_norm": 1.0,
    "seed": 0,
    "freeze_encoder": False,
    "init_std": 0.02,
    # evaluation / prediction
    "averaging": "micro",
    "plot": None,
    "text": None,
    "head": None,
    "tail": None,
}

_MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"vocab_size", "n_relations", "n_segments"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


def _parse_bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _coerce(key, value):
    default = DEFAULTS[key]
    if value is None:
        return None
    if isinstance(default, bool):
        return value if isinstance(value, bool) else _parse_bool(value)
    try:
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise ConfigError(f"--{key}: expected a number, got {value!r}") from None
    return str(value)


def load_config(config_path=None, overrides=None):
    """Merge defaults < config file < overrides.  Unknown keys are an error."""
    cfg = dict(DEFAULTS)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise InputError(f"config file not found: {path}")
        try:
            file_cfg = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update({k: _coerce(k, v) for k, v in file_cfg.items()})
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = _coerce(key, value)
    return cfg


def _require(cfg, *keys):
    for key in keys:
        if not cfg.get(key):
            raise ConfigError(f"missing required setting --{key}")


def _existing(cfg, key):
    _require(cfg, key)
    path = Path(cfg[key])
    if not path.exists():
        raise InputError(f"{key}: no such file: {path}")
    return path


def _load_documents(cfg, schema):
    path = _existing(cfg, "data")
    if cfg["format"] == "docred":
        return load_docred(path, schema)
    if cfg["format"] == "triples":
        return load_triples(path, schema)
    raise ConfigError(f"unknown data format {cfg['format']!r} (docred | triples)")


def _output_path(cfg, key, default_name):
    if cfg.get(key):
        return Path(cfg[key])
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out / default_name


def model_config_from(cfg, vocab_size, n_relations):
    return ModelConfig(vocab_size=vocab_size, n_relations=n_relations, **{k: cfg[k] for k in _MODEL_KEYS})


def train_config_from(cfg):
    return TrainConfig(**{k: cfg[k] for k in _TRAIN_KEYS})


def _load_model(cfg, vocab, schema):
    """Load the checkpoint and check it against the vocabulary and schema sizes."""
    path = _existing(cfg, "checkpoint")
    saved_cfg, params = ckpt.load_checkpoint(path)
    expected = saved_cfg
    if vocab is not None:
        expected = ModelConfig(**{**saved_cfg.to_dict(), "vocab_size": len(vocab)})
    if schema is not None:
        expected = ModelConfig(**{**expected.to_dict(), "n_relations": len(schema)})
    ckpt.check_compatible(params, expected)
    return expected, params


# --------------------------------------------------------------------------- #
# Commands
# --------------------------------------------------------------------------- #
def cmd_vocab(cfg):
    schema = RelationSchema.load(_existing(cfg, "schema"))
    docs = _load_documents(cfg, schema)
    vocab = build_vocab(docs, cfg["min_freq"])
    out = _output_path(cfg, "vocab", "vocab.txt")
    vocab.save(out)
    if len(vocab) == 4:
        log.warning("min_freq=%d left no corpus tokens; vocabulary holds only the special tokens", cfg["min_freq"])
    print(f"vocab size: {len(vocab)} -> {out}")
    return 0


def cmd_prepare(cfg):
    schema = RelationSchema.load(_existing(cfg, "schema"))
    vocab = Vocab.load(_existing(cfg, "vocab"))
    docs = _load_documents(cfg, schema)
    rng = random.Random(cfg["seed"])
    encoded, truncated, skipped = [], 0, 0
    for doc in docs:
        for inst in enumerate_pairs(doc, schema, cfg["negative_policy"], rng):
            try:
                enc = assemble(inst, vocab, cfg["max_len"], pad=False)
            except ConfigError:
                skipped += 1
                continue
            truncated += was_truncated(inst, cfg["max_len"])
            encoded.append(enc)
    out = _output_path(cfg, "cache", "cache.jsonl")
    write_cache(out, encoded)
    print(f"instances: {len(encoded)}  truncated: {truncated}  skipped: {skipped} -> {out}")
    return 0


def cmd_train(cfg):
    schema = RelationSchema.load(_existing(cfg, "schema"))
    vocab = Vocab.load(_existing(cfg, "vocab"))
    train_items = read_cache(_existing(cfg, "cache"))
    val_items = read_cache(_existing(cfg, "val_cache")) if cfg.get("val_cache") else []
    model_cfg = model_config_from(cfg, len(vocab), len(schema))
    train_cfg = train_config_from(cfg)
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.jsonl"

    with open(log_path, "w", encoding="utf-8") as log_fh:
        def on_epoch_end(epoch, params, report):
            write_log_records(log_fh, report)
            log_fh.flush()
            ckpt.save_checkpoint(out_dir / f"checkpoint_epoch{epoch}.bin", params, model_cfg)

        params, reports = train(train_items, val_items, model_cfg, train_cfg, schema=schema, on_epoch_end=on_epoch_end)

    final = _output_path(cfg, "checkpoint", "model.bin")
    ckpt.save_checkpoint(final, params, model_cfg)
    if cfg.get("plot"):
        plot_reports(reports, cfg["plot"])
    print(format_report(reports))
    print(f"checkpoint -> {final}")
    return 0


def cmd_eval(cfg):
    schema = RelationSchema.load(_existing(cfg, "schema"))
    vocab = Vocab.load(cfg["vocab"]) if cfg.get("vocab") else None
    model_cfg, params = _load_model(cfg, vocab, schema)
    items = read_cache(_existing(cfg, "cache"))
    if not items:
        raise InputError("evaluation cache is empty")
    metrics = evaluate(items, params, model_cfg, schema, averaging=cfg["averaging"])
    report = EpochReport(0, {"test": metrics})
    print(format_report([report]))
    print(json.dumps({"split": "test", **metrics.__dict__}))
    return 0


def cmd_predict(cfg):
    schema = RelationSchema.load(_existing(cfg, "schema"))
    vocab = Vocab.load(_existing(cfg, "vocab"))
    _require(cfg, "text", "head", "tail")
    model_cfg, params = _load_model(cfg, vocab, schema)
    inst = PairInstance(
        "input", 0, 1,
        tuple(split_text(cfg["head"])), tuple(split_text(cfg["tail"])), tuple(split_text(cfg["text"])),
        schema.na_id,
    )
    enc = assemble(inst, vocab, model_cfg.max_len, pad=False)
    logits, _ = forward(collate([enc]), params, model_cfg, EVAL)
    rel_id, probs = predict(logits[0])
    print(f"relation: {schema.id_to_label[rel_id]} ({probs[rel_id]:.4f})")
    dist = {schema.id_to_label[i]: round(float(p), 6) for i, p in enumerate(probs)}
    print(json.dumps(dist))
    return 0


COMMANDS = {
    "vocab": cmd_vocab,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="docrel", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file with flat keys")
        for key in DEFAULTS:
            p.add_argument(f"--{key}", dest=key, default=None)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {k: getattr(args, k) for k in DEFAULTS}
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except DocrelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
