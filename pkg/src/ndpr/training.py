"""Training loop, dev-based model selection and checkpoint files.

Checkpoint file layout (uncompressed zip, fixed timestamps so identical
training runs give byte-identical files)::

    meta.json            format tag, version, model/train config, vocabulary,
                         tag set and its sha256, selected epoch, dev F, history
    tensors/<name>.npy   one array per parameter
"""

from __future__ import annotations

import io
import json
import logging
import zipfile
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .attention import normalize_mode
from .data import (Conversation, Example, TagSet, Vocabulary, build_vocab, make_examples,
                   split_dev)
from .encoder import load_pretrained
from .evaluation import evaluate
from .model import ModelConfig, NDPRModel

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ndpr-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    encoder: str = "bigru"
    attention: str = "full"
    lr: float = 3e-4
    epochs: int = 8
    dropout: float = 0.2
    hidden_dim: int = 150
    embedding_dim: int = 300
    classifier_hidden: int | None = None
    seed: int = 0
    min_count: int = 1
    eval_every: int = 1
    batch_size: int = 1
    clip_norm: float | None = None
    init_scale: float = 0.08
    share_context_encoder: bool = True
    dev_fraction: float = 0.167
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    pretrained_embeddings: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "attention", normalize_mode(self.attention))
        if min(self.hidden_dim, self.embedding_dim, self.epochs, self.batch_size,
               self.eval_every, self.min_count) <= 0:
            raise ValueError("dimensions, epochs, batch size and intervals must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**data)

    def model_config(self, vocab_size: int, n_tags: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, n_tags=n_tags,
                           embedding_dim=self.embedding_dim, hidden_dim=self.hidden_dim,
                           classifier_hidden=self.classifier_hidden, encoder=self.encoder,
                           attention=self.attention, dropout=self.dropout,
                           share_context_encoder=self.share_context_encoder,
                           init_scale=self.init_scale, seed=self.seed)


@dataclass
class Checkpoint:
    state: dict[str, np.ndarray]
    model_config: ModelConfig
    train_config: TrainConfig
    vocab: Vocabulary
    tagset: TagSet
    dev_f: float
    epoch: int
    history: list[dict] = field(default_factory=list)

    def build_model(self) -> NDPRModel:
        model = NDPRModel(self.model_config)
        model.load_state_dict(self.state)
        return model

    def examples(self, conversations: Sequence[Conversation]) -> list[Example]:
        return make_examples(conversations, self.vocab, self.tagset)


def train(config: TrainConfig, train_convs: Sequence[Conversation],
          dev_convs: Sequence[Conversation] | None = None,
          tagset: TagSet | None = None) -> Checkpoint:
    """Train with Adam on the summed per-token cross-entropy.

    Without a dev corpus, ``dev_fraction`` of the training conversations is
    held out.  If that leaves no dev data, selection uses the training set.
    Returns the checkpoint of the epoch with the highest dev F (earliest on
    ties).
    """
    tagset = tagset or TagSet.default()
    train_convs = list(train_convs)
    if dev_convs is None:
        train_convs, dev_convs = split_dev(train_convs, config.dev_fraction,
                                           np.random.default_rng([config.seed, 3]))
    if not train_convs or not any(len(c) for c in train_convs):
        raise TrainingError("empty training set")
    vocab = build_vocab(train_convs, config.min_count)
    train_ex = make_examples(train_convs, vocab, tagset)
    dev_ex = make_examples(dev_convs, vocab, tagset) if dev_convs else train_ex

    model = NDPRModel(config.model_config(len(vocab), len(tagset)))
    if config.pretrained_embeddings:
        hit = load_pretrained(config.pretrained_embeddings, vocab.index, model.embedding.data)
        log.info("pretrained vectors loaded for %d / %d types", hit, len(vocab))
    opt = ad.Adam(model.parameters(), lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                  eps=config.eps, clip_norm=config.clip_norm)
    order_rng = np.random.default_rng([config.seed, 2])

    best_state, best_f, best_epoch = model.state_dict(), -1.0, 0
    history = []
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        order = order_rng.permutation(len(train_ex))
        for start in range(0, len(order), config.batch_size):
            batch = [train_ex[i] for i in order[start:start + config.batch_size]]
            try:
                with ad.Tape():
                    loss = model.loss_batch(batch, train=True)
                ad.backward(loss)
            except ad.NumericalError as exc:
                first = batch[0]
                raise TrainingError(f"epoch {epoch}, batch at {first.conversation_id}"
                                    f"#{first.index}: {exc}") from exc
            total += loss.item()
            opt.step()
        entry = {"epoch": epoch, "loss": total}
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            dev_f = evaluate(model, dev_ex, tagset).f1
            entry["dev_f"] = dev_f
            if dev_f > best_f:
                best_state, best_f, best_epoch = model.state_dict(), dev_f, epoch
        history.append(entry)
        log.info("epoch %d loss %.4f%s", epoch, total,
                 f" dev F {entry['dev_f']:.4f}" if "dev_f" in entry else "")

    return Checkpoint(best_state, model.config, config, vocab, tagset, best_f, best_epoch,
                      history)


# ---------------------------------------------------------------------------
# persistence


def _zip_entry(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
        "vocab": ckpt.vocab.tokens,
        "tagset": list(ckpt.tagset.names),
        "tagset_sha256": ckpt.tagset.digest,
        "epoch": ckpt.epoch,
        "dev_f": ckpt.dev_f,
        "history": ckpt.history,
        "tensors": {name: list(arr.shape) for name, arr in sorted(ckpt.state.items())},
    }
    with zipfile.ZipFile(path, "w") as zf:
        _zip_entry(zf, "meta.json",
                   json.dumps(meta, ensure_ascii=False, sort_keys=True, indent=1).encode("utf-8"))
        for name in sorted(ckpt.state):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(ckpt.state[name]),
                                      allow_pickle=False)
            _zip_entry(zf, f"tensors/{name}.npy", buf.getvalue())


def load_checkpoint(path: str | Path, expected_tagset: TagSet | None = None) -> Checkpoint:
    """Read and fully validate a checkpoint before anything is built from it."""
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json").decode("utf-8"))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise CheckpointError(f"{path}: not an ndpr checkpoint")
            if meta.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(f"{path}: unsupported checkpoint version "
                                      f"{meta.get('version')!r} (expected {CHECKPOINT_VERSION})")
            state = {}
            for name, shape in meta["tensors"].items():
                with zf.open(f"tensors/{name}.npy") as fh:
                    arr = np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False)
                if list(arr.shape) != shape:
                    raise CheckpointError(f"{path}: tensor {name} has shape {arr.shape}, "
                                          f"header says {tuple(shape)}")
                state[name] = arr
    except CheckpointError:
        raise
    except (zipfile.BadZipFile, KeyError, ValueError, EOFError, OSError) as exc:
        raise CheckpointError(f"{path}: corrupt or truncated checkpoint ({exc})") from exc

    tagset = TagSet(tuple(meta["tagset"]))
    if tagset.digest != meta["tagset_sha256"]:
        raise CheckpointError(f"{path}: tag set does not match its recorded hash")
    if expected_tagset is not None and expected_tagset.digest != tagset.digest:
        raise CheckpointError(f"{path}: tag set hash {tagset.digest[:12]} differs from "
                              f"expected {expected_tagset.digest[:12]}")
    ckpt = Checkpoint(state, ModelConfig.from_dict(meta["model_config"]),
                      TrainConfig.from_dict(meta["train_config"]), Vocabulary(meta["vocab"]),
                      tagset, meta["dev_f"], meta["epoch"], meta["history"])
    try:
        ckpt.build_model()
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: tensors do not fit the model config ({exc})") from exc
    return ckpt
