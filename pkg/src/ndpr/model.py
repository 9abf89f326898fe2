"""The full tagger: embeddings, encoder, referent modelling and output layer."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .attention import AttentionParams, AttentionTrace, normalize_mode, referent_model_variant
from .autodiff import Parameter, Tensor
from .classifier import Classifier, predict, sequence_loss
from .data import Example
from .encoder import ENCODER_MODES, BiGruEncoder, encode_batch


@dataclass
class ModelConfig:
    vocab_size: int
    n_tags: int
    embedding_dim: int = 300
    hidden_dim: int = 150
    classifier_hidden: int | None = None  # defaults to 2 * hidden_dim
    encoder: str = "bigru"
    attention: str = "full"
    dropout: float = 0.2
    share_context_encoder: bool = True
    init_scale: float = 0.08
    seed: int = 0

    def __post_init__(self):
        self.attention = normalize_mode(self.attention)
        if self.encoder not in ENCODER_MODES:
            raise ValueError(f"unknown encoder mode {self.encoder!r}")
        if min(self.vocab_size, self.n_tags, self.embedding_dim, self.hidden_dim) <= 0:
            raise ValueError("model dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.classifier_hidden is None:
            self.classifier_hidden = 2 * self.hidden_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class Output:
    """Tag distributions, one row per token; ``offsets`` delimit the examples."""

    probs: Tensor
    trace: AttentionTrace | None = None
    offsets: tuple[int, ...] = ()

    def split(self) -> list[np.ndarray]:
        return np.split(self.probs.data, self.offsets[1:-1])


class NDPRModel:
    """Dropped-pronoun tagger; ``attention="none"`` is the plain BiGRU baseline."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        scale = config.init_scale
        self.embedding = Parameter(
            "embedding", ad.uniform_init(rng, (config.vocab_size, config.embedding_dim), scale))
        self.encoder = BiGruEncoder("enc", self.embedding, config.hidden_dim, rng, scale)
        if config.share_context_encoder:
            self.context_encoder = self.encoder
        else:
            self.context_encoder = BiGruEncoder("ctx_enc", self.embedding, config.hidden_dim,
                                                rng, scale)
        self.attention = AttentionParams(config.hidden_dim, config.attention, rng, scale)
        two_d = 2 * config.hidden_dim
        clf_in = two_d if config.attention == "none" else 2 * two_d
        self.classifier = Classifier(clf_in, config.classifier_hidden, config.n_tags, rng, scale)
        self.dropout_rng = np.random.default_rng([config.seed, 1])

    def parameters(self) -> list[Parameter]:
        params = [self.embedding, *self.encoder.parameters()]
        if self.context_encoder is not self.encoder:
            params += self.context_encoder.parameters()
        return params + self.attention.parameters() + self.classifier.parameters()

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p.data[...] = value

    def forward(self, example: Example, train: bool = False, trace: bool = False) -> Output:
        return self.forward_batch([example], train=train, trace=trace)

    def forward_batch(self, examples: Sequence[Example], train: bool = False,
                      trace: bool = False) -> Output:
        """Run several examples in one pass; their token rows are stacked."""
        if trace and len(examples) != 1:
            raise ValueError("attention traces are produced for one example at a time")
        cfg = self.config
        sentence, memory, owner = encode_batch(
            self.encoder, self.context_encoder, [ex.tokens for ex in examples],
            [ex.context for ex in examples], cfg.encoder, with_context=cfg.attention != "none")
        feature, attn_trace = referent_model_variant(
            cfg.attention, sentence.states, memory, self.attention, trace=trace,
            token_owner=owner if len(examples) > 1 else None)
        probs = predict(self.classifier, sentence.states, feature, train, cfg.dropout,
                        self.dropout_rng)
        offsets = tuple(np.cumsum([0] + [len(ex) for ex in examples]).tolist())
        return Output(probs, attn_trace, offsets)

    def loss(self, example: Example, train: bool = True) -> Tensor:
        return self.loss_batch([example], train=train)

    def loss_batch(self, examples: Sequence[Example], train: bool = True) -> Tensor:
        """Summed cross-entropy over every token of every example."""
        gold = [t for ex in examples for t in ex.tags]
        return sequence_loss(self.forward_batch(examples, train=train).probs, gold)

    def predict_tags(self, example: Example) -> list[int]:
        return self.forward(example).probs.data.argmax(axis=1).tolist()

    def predict_batch(self, examples: Sequence[Example], chunk: int = 32) -> list[list[int]]:
        out = []
        for i in range(0, len(examples), chunk):
            result = self.forward_batch(examples[i:i + chunk])
            out.extend(p.argmax(axis=1).tolist() for p in result.split())
        return out
