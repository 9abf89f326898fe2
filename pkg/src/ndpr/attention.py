"""Two-level structured attention over a context memory.

Every function works on a whole sentence at once: row ``n`` of each matrix
belongs to token ``n``.  Word-level distributions are normalised within each
context utterance, so a row of ``aw`` is a concatenation of one simplex per
utterance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .encoder import ContextMemory

ATTENTION_MODES = ("full", "sentence-only", "word-only", "none")

_MODE_ALIASES = {
    "full": "full",
    "sentence": "sentence-only",
    "sentence-only": "sentence-only",
    "word": "word-only",
    "word-only": "word-only",
    "none": "none",
}


def normalize_mode(mode: str) -> str:
    try:
        return _MODE_ALIASES[mode]
    except KeyError:
        raise ValueError(f"unknown attention mode {mode!r}") from None


class AttentionParams:
    """``W_update`` (2d x 4d) and ``b_update`` for the DP-state update;
    ``w_rel`` (1 x 2d) and scalar ``b_rel`` for word relevance scores.

    Only the parameters a mode actually uses are created.
    """

    def __init__(self, hidden_dim: int, mode: str, rng: np.random.Generator,
                 init_scale: float = 0.08, prefix: str = "attn"):
        two_d = 2 * hidden_dim
        self.W_update = self.b_update = self.w_rel = self.b_rel = None
        if mode == "full":
            self.W_update = Parameter(f"{prefix}.W_update",
                                      ad.uniform_init(rng, (two_d, 2 * two_d), init_scale))
            self.b_update = Parameter(f"{prefix}.b_update", np.zeros(two_d))
        if mode in ("full", "word-only"):
            self.w_rel = Parameter(f"{prefix}.w_rel", ad.uniform_init(rng, (1, two_d), init_scale))
            self.b_rel = Parameter(f"{prefix}.b_rel", np.zeros(1))

    def parameters(self) -> list[Parameter]:
        return [p for p in (self.W_update, self.b_update, self.w_rel, self.b_rel)
                if p is not None]


@dataclass
class AttentionTrace:
    """Intermediate values of one sentence, as plain arrays.

    Shapes: ``sentence_scores``/``sentence_weights`` (s, m);
    ``word_scores``/``word_weights`` (s, N) with N the total context words;
    ``summaries`` (s, m, 2d) are the per-utterance ``tw`` vectors.
    """

    lengths: tuple[int, ...]
    sentence_scores: np.ndarray | None = None
    sentence_weights: np.ndarray | None = None
    sentence_summary: np.ndarray | None = None
    updated_state: np.ndarray | None = None
    word_scores: np.ndarray | None = None
    word_weights: np.ndarray | None = None
    summaries: np.ndarray | None = None
    referent: np.ndarray | None = None

    def word_weights_by_utterance(self, n: int) -> list[list[float]]:
        if self.word_weights is None:
            return []
        bounds = np.cumsum(self.lengths)[:-1]
        return [block.tolist() for block in np.split(self.word_weights[n], bounds)]


def _allowed(token_owner: np.ndarray | None, memory: ContextMemory) -> np.ndarray | None:
    """Token-by-utterance mask for batched examples (``None``: single example)."""
    if token_owner is None or memory.owner is None:
        return None
    allowed = np.asarray(token_owner)[:, None] == np.asarray(memory.owner)[None, :]
    return None if allowed.all() else allowed


def sentence_attention(states: Tensor, memory: ContextMemory,
                       token_owner: np.ndarray | None = None) -> tuple[Tensor | None, Tensor]:
    """Softmax of ``h_n . cs_i`` over utterances and the weighted sum of ``cs_i``.

    With an empty memory the weights are ``None`` and the summary is zero.
    """
    if memory.size == 0:
        return None, ad.Tensor(np.zeros(states.shape))
    scores = states @ memory.sentences.T
    weights = ad.softmax(scores, mask=_allowed(token_owner, memory))
    return weights, ad.weighted_sum(weights, memory.sentences)


def update_dp_state(states: Tensor, summary: Tensor, params: AttentionParams) -> Tensor:
    """``hs_n = W_update [h_n; s_n] + b_update`` for every token."""
    joined = ad.concat([states, summary], axis=1)
    return joined @ params.W_update.T + params.b_update


def word_scores(query: Tensor, memory: ContextMemory, params: AttentionParams) -> Tensor:
    """``rw = w_rel . (query_n * cw_j) + b_rel`` for every token and context word."""
    return (query * params.w_rel) @ memory.words.T + params.b_rel


def word_attention(query: Tensor, memory: ContextMemory, params: AttentionParams) -> Tensor:
    """Word distributions, one simplex per utterance, laid out as (s, N)."""
    return ad.softmax(word_scores(query, memory, params), segments=memory.lengths)


def referent_representation(sentence_weights: Tensor | None, word_weights: Tensor | None,
                            memory: ContextMemory, like: Tensor | None = None) -> Tensor:
    """``w_n = sum_i as_{n,i} tw_{n,i}`` with ``tw_{n,i} = sum_j aw_{n,i,j} cw_{i,j}``.

    Computed as one product: spreading ``as_{n,i}`` across the words of
    utterance ``i`` gives per-word weights ``as_{n,i} * aw_{n,i,j}``.  An empty
    memory yields zeros shaped like ``like`` (the DP states).
    """
    if memory.size == 0:
        if like is None:
            raise ValueError("empty memory: pass `like` to size the zero referent")
        return ad.Tensor(np.zeros(like.shape))
    spread = np.repeat(np.eye(memory.size), memory.lengths, axis=1)
    per_word = ad.mul(word_weights, ad.matmul(sentence_weights, spread))
    return ad.weighted_sum(per_word, memory.words)


def referent_model_variant(mode: str, states: Tensor, memory: ContextMemory,
                           params: AttentionParams | None, trace: bool = False,
                           token_owner: np.ndarray | None = None,
                           ) -> tuple[Tensor | None, AttentionTrace | None]:
    """Context feature fed to the classifier next to ``h_n``.

    full: ``w_n`` through both attention levels; sentence-only: ``s_n``;
    word-only: ``w_n`` scored with ``h_n`` and averaged uniformly over
    utterances; none: no feature.

    For batched examples ``token_owner`` gives each row's example; a token
    only attends to utterances of its own example.  Word distributions are
    still computed for every utterance, but the sentence-level weights of
    foreign utterances are zero, which removes them from ``w_n``.
    """
    mode = normalize_mode(mode)
    if mode == "none":
        return None, (AttentionTrace(memory.lengths) if trace else None)
    out = AttentionTrace(memory.lengths) if trace else None
    if memory.size == 0:
        return ad.Tensor(np.zeros(states.shape)), out

    sent_w = summary = query = word_w = None
    if mode in ("full", "sentence-only"):
        sent_w, summary = sentence_attention(states, memory, token_owner)
        if mode == "sentence-only":
            feature = summary
    if mode == "full":
        query = update_dp_state(states, summary, params)
    elif mode == "word-only":
        query = states
        allowed = _allowed(token_owner, memory)
        if allowed is None:
            uniform = np.full((states.shape[0], memory.size), 1.0 / memory.size)
        else:
            counts = allowed.sum(axis=1, keepdims=True)
            uniform = np.divide(allowed, counts, out=np.zeros(allowed.shape), where=counts > 0)
        sent_w = ad.Tensor(uniform)
    if query is not None:
        word_w = word_attention(query, memory, params)
        feature = referent_representation(sent_w, word_w, memory)

    if out is not None:
        cs = memory.sentences.data
        if mode != "word-only":
            out.sentence_scores = states.data @ cs.T
            out.sentence_summary = summary.data.copy()
        out.sentence_weights = sent_w.data.copy()
        if query is not None:
            out.updated_state = query.data.copy() if mode == "full" else None
            out.word_scores = ((query.data * params.w_rel.data) @ memory.words.data.T
                                + params.b_rel.data)
            out.word_weights = word_w.data.copy()
            out.summaries = _utterance_summaries(word_w.data, memory)
            out.referent = feature.data.copy()
    return feature, out


def _utterance_summaries(word_weights: np.ndarray, memory: ContextMemory) -> np.ndarray:
    s = word_weights.shape[0]
    out = np.empty((s, memory.size, memory.words.shape[1]))
    start = 0
    for i, k in enumerate(memory.lengths):
        out[:, i] = word_weights[:, start:start + k] @ memory.words.data[start:start + k]
        start += k
    return out
