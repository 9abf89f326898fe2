"""``ndpr`` command line: train, eval, predict, inspect-attention, gen-synth.

Settings use one flat dotted-key schema, both in the ``--config`` JSON file
and as ``key=value`` overrides on the command line::

    ndpr train --train corpus.jsonl --out model.ckpt model.hidden_dim=64 train.lr=0.001

Precedence: built-in defaults < config file < ``key=value`` < named flags.
Every failure prints one JSON line ``{"error": <kind>, "message": <text>}`` on
stderr and exits nonzero.  ``NDPR_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from dataclasses import fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .data import (Conversation, CorpusError, TagSet, Utterance, dumps_corpus, load_corpus,
                   save_corpus)
from .evaluation import TagsetMismatch, evaluate
from .synthgen import SynthConfig, default_entities, generate_with_records
from .training import (CheckpointError, TrainConfig, TrainingError, load_checkpoint,
                       save_checkpoint, train)

log = logging.getLogger("ndpr")

MODEL_KEYS = ("encoder", "attention", "hidden_dim", "embedding_dim", "classifier_hidden",
              "dropout", "init_scale", "share_context_encoder", "pretrained_embeddings")
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name not in MODEL_KEYS)
SYNTH_KEYS = tuple(f.name for f in fields(SynthConfig) if f.name != "entities") + (
    "entities_per_class",)
DATA_KEYS = ("train", "dev", "test", "tagset")

SCHEMA = {**{f"model.{k}": k for k in MODEL_KEYS}, **{f"train.{k}": k for k in TRAIN_KEYS},
          **{f"synth.{k}": k for k in SYNTH_KEYS}, **{f"data.{k}": k for k in DATA_KEYS}}

ATTENTION_FLAGS = {"full": "full", "sentence": "sentence-only", "word": "word-only",
                   "none": "none"}


class UsageError(Exception):
    pass


class RunConfig:
    """Resolved settings of one invocation."""

    def __init__(self, subcommand: str, values: dict[str, Any], out: str | None):
        self.subcommand = subcommand
        self.values = values
        self.out = out

    def section(self, name: str) -> dict[str, Any]:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig.from_dict({**self.section("model"), **self.section("train")})
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid training settings: {exc}") from exc

    def synth_config(self) -> SynthConfig:
        opts = self.section("synth")
        per_class = opts.pop("entities_per_class", None)
        if per_class is not None:
            opts["entities"] = default_entities(int(per_class))
        for key in ("utterances", "distances", "fillers"):
            if key in opts:
                opts[key] = tuple(opts[key])
        try:
            return SynthConfig(**opts)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid synth settings: {exc}") from exc

    def tagset(self) -> TagSet:
        spec = self.values.get("data.tagset", "default")
        if spec == "default":
            return TagSet.default()
        if spec == "concrete":
            return TagSet.concrete()
        if isinstance(spec, list):
            return TagSet(tuple(spec))
        raise UsageError(f"data.tagset must be 'default', 'concrete' or a list, got {spec!r}")

    def expected_tagset(self) -> TagSet | None:
        """The tag set a checkpoint must carry, when the user names one."""
        return self.tagset() if "data.tagset" in self.values else None

    def path(self, key: str, required: bool = True) -> Path | None:
        value = self.values.get(key)
        if value is None:
            if required:
                raise UsageError(f"missing input: set {key} (or the matching flag)")
            return None
        path = Path(value)
        if not path.exists():
            raise FileNotFoundError(f"{key}: no such file {path}")
        return path


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _check_keys(values: dict[str, Any], origin: str) -> None:
    unknown = sorted(set(values) - set(SCHEMA))
    if unknown:
        raise UsageError(f"unknown setting(s) in {origin}: {', '.join(unknown)}")


def resolve(args: argparse.Namespace) -> RunConfig:
    values: dict[str, Any] = {}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise FileNotFoundError(f"config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a flat JSON object")
        _check_keys(loaded, args.config)
        values.update(loaded)
    overrides = {}
    for item in args.overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"override {item!r} is not of the form key=value")
        overrides[key] = _parse_value(raw)
    _check_keys(overrides, "command line")
    values.update(overrides)

    flags = {
        "train.seed": args.seed, "synth.seed": args.seed,
        "model.encoder": args.encoder,
        "model.attention": ATTENTION_FLAGS.get(args.attention) if args.attention else None,
        "train.epochs": args.epochs, "train.lr": args.lr,
    }
    for attr, key in (("train_path", "data.train"), ("dev_path", "data.dev"),
                      ("data_path", "data.test")):
        flags[key] = getattr(args, attr, None)
    values.update({k: v for k, v in flags.items() if v is not None})
    return RunConfig(args.command, values, args.out)


# ---------------------------------------------------------------------------
# subcommands


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def cmd_train(run: RunConfig, args: argparse.Namespace) -> int:
    config = run.train_config()
    tagset = run.tagset()
    train_convs = load_corpus(run.path("data.train"), tagset)
    dev_path = run.path("data.dev", required=False)
    dev_convs = load_corpus(dev_path, tagset) if dev_path else None
    ckpt = train(config, train_convs, dev_convs, tagset=tagset)
    out = Path(run.out or "ndpr.ckpt")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, out)
    _write_text(out.with_name(out.name + ".log.jsonl"),
                "".join(json.dumps(entry, sort_keys=True) + "\n" for entry in ckpt.history))
    print(json.dumps({"checkpoint": str(out), "epoch": ckpt.epoch, "dev_f": ckpt.dev_f},
                     sort_keys=True))
    return 0


def cmd_eval(run: RunConfig, args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint, run.expected_tagset())
    convs = load_corpus(run.path("data.test"), ckpt.tagset)
    report = evaluate(ckpt.build_model(), ckpt.examples(convs), ckpt.tagset)
    text = report.format_text(args.name or ckpt.model_config.attention)
    if run.out:
        out = Path(run.out)
        _write_text(out, report.to_json() + "\n")
        _write_text(out.with_suffix(".txt"), text + "\n")
    print(text)
    return 0


def cmd_predict(run: RunConfig, args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint, run.expected_tagset())
    convs = load_corpus(run.path("data.test"), ckpt.tagset)
    examples = ckpt.examples(convs)
    preds = iter(ckpt.build_model().predict_batch(examples))
    names = ckpt.tagset.names
    tagged = []
    for conv in convs:
        utts = []
        for utt in conv.utterances:
            tags = tuple(names[i] for i in next(preds))
            utts.append(Utterance(utt.tokens, tags))
        tagged.append(Conversation(conv.id, tuple(utts)))
    if run.out:
        Path(run.out).parent.mkdir(parents=True, exist_ok=True)
        save_corpus(tagged, run.out)
    else:
        sys.stdout.write(dumps_corpus(tagged))
    return 0


def _trace_json(example, conv: Conversation, output, tagset: TagSet) -> dict:
    trace = output.trace
    probs = output.probs.data
    utterance = conv.utterances[example.index]
    tokens = []
    for n, token in enumerate(utterance.tokens):
        entry = {"token": token, "gold": utterance.tags[n],
                 "predicted": tagset.names[int(probs[n].argmax())],
                 "probability": float(probs[n].max())}
        if trace is not None and trace.sentence_weights is not None:
            entry["sentence_weights"] = trace.sentence_weights[n].tolist()
        if trace is not None and trace.word_weights is not None:
            entry["word_weights"] = trace.word_weights_by_utterance(n)
        tokens.append(entry)
    return {
        "conversation": conv.id,
        "utterance": example.index,
        "context": [{"index": i, "tokens": list(conv.utterances[i].tokens)}
                    for i in example.context_indices],
        "tokens": tokens,
    }


def cmd_inspect(run: RunConfig, args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint, run.expected_tagset())
    convs = load_corpus(run.path("data.test"), ckpt.tagset)
    if not convs:
        raise CorpusError("corpus holds no conversations")
    by_id = {c.id: c for c in convs}
    conv = by_id.get(args.conversation) if args.conversation else convs[0]
    if conv is None:
        raise KeyError(f"conversation {args.conversation!r} not in corpus")
    if not 0 <= args.utterance < len(conv):
        raise IndexError(f"utterance {args.utterance} out of range (conversation has "
                         f"{len(conv)})")
    example = ckpt.examples([conv])[args.utterance]
    output = ckpt.build_model().forward(example, trace=True)
    payload = json.dumps(_trace_json(example, conv, output, ckpt.tagset),
                         ensure_ascii=False, indent=1)
    if run.out:
        _write_text(Path(run.out), payload + "\n")
    else:
        print(payload)
    return 0


def cmd_gensynth(run: RunConfig, args: argparse.Namespace) -> int:
    convs, records = generate_with_records(run.synth_config())
    out = Path(run.out or "synth.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_corpus(convs, out)
    if args.records:
        _write_text(Path(args.records), "".join(
            json.dumps(r.__dict__, ensure_ascii=False, sort_keys=True) + "\n" for r in records))
    print(json.dumps({"corpus": str(out), "conversations": len(convs), "drops": len(records)}))
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
            "inspect-attention": cmd_inspect, "gen-synth": cmd_gensynth}


# ---------------------------------------------------------------------------
# argument parsing and error reporting


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat dotted-key JSON settings file")
    common.add_argument("--seed", type=int)
    common.add_argument("--encoder", choices=("bigru", "pc-bigru"))
    common.add_argument("--attention", choices=tuple(ATTENTION_FLAGS))
    common.add_argument("--epochs", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--out", help="output file")
    common.add_argument("overrides", nargs="*", metavar="key=value")

    parser = _Parser(prog="ndpr", description="Dropped pronoun recovery.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common], help="train and save a checkpoint")
    p.add_argument("--train", dest="train_path", help="training corpus (JSON lines)")
    p.add_argument("--dev", dest="dev_path", help="dev corpus; default holds out part of train")

    for name, text in (("eval", "score a corpus"), ("predict", "tag a corpus"),
                       ("inspect-attention", "dump attention weights of one utterance")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", dest="data_path", help="corpus (JSON lines)")
        if name == "eval":
            p.add_argument("--name", help="row label in the score table")
        if name == "inspect-attention":
            p.add_argument("--conversation", help="conversation id (default: first)")
            p.add_argument("--utterance", type=int, default=0)

    p = sub.add_parser("gen-synth", parents=[common], help="write a synthetic corpus")
    p.add_argument("--records", help="also write per-drop referent records (JSON lines)")
    return parser


ERROR_KINDS = (UsageError, CorpusError, CheckpointError, TrainingError, TagsetMismatch,
               FileNotFoundError, KeyError, IndexError, ValueError, OSError)


def _fail(exc: BaseException) -> int:
    message = str(exc.args[0]) if isinstance(exc, KeyError) and exc.args else str(exc)
    print(json.dumps({"error": type(exc).__name__, "message": " ".join(message.split())},
                     ensure_ascii=False), file=sys.stderr)
    return 2 if isinstance(exc, UsageError) else 1


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("NDPR_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    logging.captureWarnings(True)
    try:
        args = build_parser().parse_args(argv)
        run = resolve(args)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            return COMMANDS[args.command](run, args)
    except ERROR_KINDS as exc:
        return _fail(exc)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
