"""Two-layer softmax output layer and the summed cross-entropy objective."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


class Classifier:
    """``softmax(W2 tanh(W1 x + b1) + b2)`` applied to every row of ``x``."""

    def __init__(self, input_dim: int, hidden: int, n_tags: int, rng: np.random.Generator,
                 init_scale: float = 0.08, prefix: str = "clf"):
        if hidden <= 0 or n_tags <= 0:
            raise ValueError("classifier width and tag count must be positive")
        self.input_dim = input_dim
        self.W1 = Parameter(f"{prefix}.W1", ad.uniform_init(rng, (hidden, input_dim), init_scale))
        self.b1 = Parameter(f"{prefix}.b1", np.zeros(hidden))
        self.W2 = Parameter(f"{prefix}.W2", ad.uniform_init(rng, (n_tags, hidden), init_scale))
        self.b2 = Parameter(f"{prefix}.b2", np.zeros(n_tags))

    def parameters(self) -> list[Parameter]:
        return [self.W1, self.b1, self.W2, self.b2]

    def logits(self, states: Tensor, feature: Tensor | None, train: bool = False,
               dropout: float = 0.0, rng: np.random.Generator | None = None) -> Tensor:
        x = states if feature is None else ad.concat([states, feature], axis=1)
        if x.shape[-1] != self.input_dim:
            raise ad.ShapeError("classifier", x.shape, self.W1.shape)
        x = ad.dropout(x, dropout, train, rng)
        hidden = ad.tanh(x @ self.W1.T + self.b1)
        hidden = ad.dropout(hidden, dropout, train, rng)
        return hidden @ self.W2.T + self.b2


def predict(clf: Classifier, states: Tensor, feature: Tensor | None, train: bool = False,
            dropout: float = 0.0, rng: np.random.Generator | None = None) -> Tensor:
    """Per-token tag distributions, one row per token."""
    return ad.softmax(clf.logits(states, feature, train, dropout, rng))


def sequence_loss(probs: Tensor, gold: Sequence[int]) -> Tensor:
    """``-sum_n log p_n(gold_n)``; every position counts, None tags included."""
    return ad.nll(probs, gold)
