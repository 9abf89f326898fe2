"""GRU cells, BiGRU / PC-BiGRU sentence encoders and context memories.

All sequences handled in one call (target sentence plus context utterances)
are run through the recurrence together as rows of a matrix.  Sequences are
left-aligned and padded; a padded step leaves the hidden state untouched, so
the state after the last real token is carried to the end.

Hidden-state layout: step ``t`` of sequence ``b`` lives in row ``t * B + b`` of
the stacked state matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor

ENCODER_MODES = ("bigru", "pc-bigru")


class GruCell:
    """Standard GRU cell: update gate z, reset gate r, tanh candidate."""

    def __init__(self, prefix: str, input_dim: int, hidden_dim: int,
                 rng: np.random.Generator, init_scale: float = 0.08):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        d, e = hidden_dim, input_dim
        self.W_z = Parameter(f"{prefix}.W_z", ad.uniform_init(rng, (d, e), init_scale))
        self.W_r = Parameter(f"{prefix}.W_r", ad.uniform_init(rng, (d, e), init_scale))
        self.W_h = Parameter(f"{prefix}.W_h", ad.uniform_init(rng, (d, e), init_scale))
        self.U_z = Parameter(f"{prefix}.U_z", ad.uniform_init(rng, (d, d), init_scale))
        self.U_r = Parameter(f"{prefix}.U_r", ad.uniform_init(rng, (d, d), init_scale))
        self.U_h = Parameter(f"{prefix}.U_h", ad.uniform_init(rng, (d, d), init_scale))
        self.b_z = Parameter(f"{prefix}.b_z", np.zeros(d))
        self.b_r = Parameter(f"{prefix}.b_r", np.zeros(d))
        self.b_h = Parameter(f"{prefix}.b_h", np.zeros(d))

    def parameters(self) -> list[Parameter]:
        return [self.W_z, self.W_r, self.W_h, self.U_z, self.U_r, self.U_h,
                self.b_z, self.b_r, self.b_h]

    def run(self, inputs: Tensor, lengths: np.ndarray) -> Tensor:
        """Run ``B = len(lengths)`` sequences given time-major input rows.

        ``inputs`` has ``T * B`` rows; the result stacks the ``B x d`` state of
        every step the same way.  The recurrence is a single recorded op with
        a hand-written backward pass (see :meth:`run_unfused` for the same
        computation built from elementary ops).
        """
        return gru_sequence(self, inputs, lengths)

    def run_unfused(self, inputs: Tensor, lengths: np.ndarray) -> Tensor:
        batch = len(lengths)
        steps = inputs.shape[0] // batch
        x_z = inputs @ self.W_z.T + self.b_z
        x_r = inputs @ self.W_r.T + self.b_r
        x_h = inputs @ self.W_h.T + self.b_h
        u_z, u_r, u_h = self.U_z.T, self.U_r.T, self.U_h.T
        h = ad.Tensor(np.zeros((batch, self.hidden_dim)))
        states = []
        for t in range(steps):
            lo, hi = t * batch, (t + 1) * batch
            z = ad.sigmoid(ad.slice_rows(x_z, lo, hi) + h @ u_z)
            r = ad.sigmoid(ad.slice_rows(x_r, lo, hi) + h @ u_r)
            cand = ad.tanh(ad.slice_rows(x_h, lo, hi) + (r * h) @ u_h)
            live = t < lengths
            if not live.all():
                z = z * live[:, None].astype(np.float64)
            h = h + z * (cand - h)
            states.append(h)
        return ad.concat(states, axis=0)


def gru_sequence(cell: GruCell, inputs: Tensor, lengths: np.ndarray) -> Tensor:
    """Fused GRU recurrence over padded, time-major rows (one tape record)."""
    lengths = np.asarray(lengths)
    batch = len(lengths)
    x = inputs.data
    if x.ndim != 2 or x.shape[1] != cell.input_dim or x.shape[0] % batch:
        raise ad.ShapeError("gru_sequence", x.shape, (len(lengths),))
    steps, d = x.shape[0] // batch, cell.hidden_dim
    Wz, Wr, Wh = cell.W_z.data, cell.W_r.data, cell.W_h.data
    Uz, Ur, Uh = cell.U_z.data, cell.U_r.data, cell.U_h.data
    xz = x @ Wz.T + cell.b_z.data
    xr = x @ Wr.T + cell.b_r.data
    xh = x @ Wh.T + cell.b_h.data
    live = (np.arange(steps)[:, None] < lengths[None, :]).astype(np.float64)[:, :, None]

    out = np.empty((steps * batch, d))
    zs, rs, cs, prevs = (np.empty((steps, batch, d)) for _ in range(4))
    h = np.zeros((batch, d))
    for t in range(steps):
        rows = slice(t * batch, (t + 1) * batch)
        z = ad.stable_sigmoid(xz[rows] + h @ Uz.T) * live[t]
        r = ad.stable_sigmoid(xr[rows] + h @ Ur.T)
        c = np.tanh(xh[rows] + (r * h) @ Uh.T)
        zs[t], rs[t], cs[t], prevs[t] = z, r, c, h
        h = h + z * (c - h)
        out[rows] = h

    def backward(g):
        dxz, dxr, dxh = np.empty_like(xz), np.empty_like(xr), np.empty_like(xh)
        dUz, dUr, dUh = np.zeros_like(Uz), np.zeros_like(Ur), np.zeros_like(Uh)
        carry = np.zeros((batch, d))
        for t in range(steps - 1, -1, -1):
            rows = slice(t * batch, (t + 1) * batch)
            z, r, c, hp = zs[t], rs[t], cs[t], prevs[t]
            dh = g[rows] + carry
            # z carries the padding mask: padded steps pass dh straight through
            da_z = dh * (c - hp) * z * (1.0 - z)
            da_c = dh * z * (1.0 - c * c)
            dq = da_c @ Uh
            da_r = dq * hp * r * (1.0 - r)
            carry = dh * (1.0 - z) + dq * r + da_z @ Uz + da_r @ Ur
            dUz += da_z.T @ hp
            dUr += da_r.T @ hp
            dUh += da_c.T @ (r * hp)
            dxz[rows], dxr[rows], dxh[rows] = da_z, da_r, da_c
        dx = dxz @ Wz + dxr @ Wr + dxh @ Wh
        return (dx, dxz.T @ x, dxr.T @ x, dxh.T @ x, dUz, dUr, dUh,
                dxz.sum(axis=0), dxr.sum(axis=0), dxh.sum(axis=0))

    return ad.custom_op("gru_sequence", out,
                        (inputs, cell.W_z, cell.W_r, cell.W_h, cell.U_z, cell.U_r, cell.U_h,
                         cell.b_z, cell.b_r, cell.b_h), backward)


def gru_step(cell: GruCell, x: Tensor, h_prev: Tensor) -> Tensor:
    """One GRU step on vectors: ``h = (1 - z) * h_prev + z * candidate``."""
    x, h_prev = ad.as_tensor(x), ad.as_tensor(h_prev)
    if x.shape != (cell.input_dim,) or h_prev.shape != (cell.hidden_dim,):
        raise ad.ShapeError("gru_step", x.shape, h_prev.shape,
                            detail=f"cell expects ({cell.input_dim},), ({cell.hidden_dim},)")
    z = ad.sigmoid(cell.W_z @ x + cell.U_z @ h_prev + cell.b_z)
    r = ad.sigmoid(cell.W_r @ x + cell.U_r @ h_prev + cell.b_r)
    cand = ad.tanh(cell.W_h @ x + cell.U_h @ (r * h_prev) + cell.b_h)
    return ad.affine(z, -1.0, 1.0) * h_prev + z * cand


@dataclass
class EncodedSentence:
    """Per-token states of one sentence.

    ``states`` rows are the DP states ``h_n``: ``[backward_n, forward_n]`` for
    BiGRU and ``[backward_n, forward_{n-1}]`` (zero at ``n = 1``) for PC-BiGRU.
    """

    forward: Tensor
    backward: Tensor
    states: Tensor
    mode: str

    def __len__(self) -> int:
        return self.states.shape[0]


@dataclass
class ContextMemory:
    """Sentence vectors ``cs_i`` (rows of ``sentences``) and word vectors.

    Word vectors of all utterances are stacked in ``words``; utterance ``i``
    owns a contiguous block of ``lengths[i]`` rows.  When several examples are
    encoded together, ``owner[i]`` is the example utterance ``i`` belongs to.
    """

    sentences: Tensor | None
    words: Tensor | None
    lengths: tuple[int, ...]
    owner: tuple[int, ...] | None = None

    @property
    def size(self) -> int:
        return len(self.lengths)

    def word_block(self, i: int) -> np.ndarray:
        start = sum(self.lengths[:i])
        return self.words.data[start:start + self.lengths[i]]

    @classmethod
    def empty(cls) -> "ContextMemory":
        return cls(None, None, ())


class BiGruEncoder:
    """Two independent GRUs (left-to-right and right-to-left) over embeddings."""

    def __init__(self, prefix: str, embedding: Parameter, hidden_dim: int,
                 rng: np.random.Generator, init_scale: float = 0.08):
        self.embedding = embedding
        self.hidden_dim = hidden_dim
        emb_dim = embedding.shape[1]
        self.fwd = GruCell(f"{prefix}.fwd", emb_dim, hidden_dim, rng, init_scale)
        self.bwd = GruCell(f"{prefix}.bwd", emb_dim, hidden_dim, rng, init_scale)

    def parameters(self) -> list[Parameter]:
        return self.fwd.parameters() + self.bwd.parameters()

    def run(self, sequences: Sequence[Sequence[int]], pad_id: int = 0) -> "_BatchStates":
        if not sequences or any(len(s) == 0 for s in sequences):
            raise ValueError("cannot encode an empty sentence")
        lengths = np.array([len(s) for s in sequences], dtype=np.intp)
        batch, steps = len(sequences), int(lengths.max())
        fwd_ids = np.full((steps, batch), pad_id, dtype=np.intp)
        bwd_ids = np.full((steps, batch), pad_id, dtype=np.intp)
        for b, seq in enumerate(sequences):
            fwd_ids[: len(seq), b] = seq
            bwd_ids[: len(seq), b] = seq[::-1]
        fwd_in = ad.take_rows(self.embedding, fwd_ids.reshape(-1))
        bwd_in = ad.take_rows(self.embedding, bwd_ids.reshape(-1))
        fwd = self.fwd.run(fwd_in, lengths)
        bwd = self.bwd.run(bwd_in, lengths)
        return _BatchStates(fwd, bwd, lengths, self.hidden_dim)


class _BatchStates:
    def __init__(self, fwd: Tensor, bwd: Tensor, lengths: np.ndarray, hidden_dim: int):
        self.fwd = fwd
        self.bwd = bwd
        self.lengths = lengths
        self.batch = len(lengths)
        self.hidden_dim = hidden_dim

    def _rows(self, b: int) -> tuple[np.ndarray, np.ndarray]:
        n = self.lengths[b]
        pos = np.arange(n)
        return pos * self.batch + b, (n - 1 - pos) * self.batch + b

    def sentence(self, b: int, mode: str) -> EncodedSentence:
        return self.sentences([b], mode)

    def sentences(self, members: Sequence[int], mode: str) -> EncodedSentence:
        """DP states of the given sequences, stacked row-wise in order."""
        if mode not in ENCODER_MODES:
            raise ValueError(f"unknown encoder mode {mode!r}")
        fwd_rows, bwd_rows = (np.concatenate(r) for r in zip(*(self._rows(b) for b in members)))
        fwd = ad.take_rows(self.fwd, fwd_rows)
        bwd = ad.take_rows(self.bwd, bwd_rows)
        if mode == "bigru":
            prev = fwd
        else:
            # shift each sentence's forward states down one token; zero at its start
            firsts = np.cumsum([0] + [int(self.lengths[b]) for b in members[:-1]])
            zero_row = self.fwd.shape[0]
            shifted = np.concatenate(([zero_row], fwd_rows[:-1]))
            shifted[firsts] = zero_row
            padded = ad.concat([self.fwd, ad.Tensor(np.zeros((1, self.hidden_dim)))], axis=0)
            prev = ad.take_rows(padded, shifted)
        return EncodedSentence(fwd, bwd, ad.concat([bwd, prev], axis=1), mode)

    def memory(self, members: Sequence[int], owner: Sequence[int] | None = None) -> ContextMemory:
        members = list(members)
        if not members:
            return ContextMemory.empty()
        fwd_rows, bwd_rows = zip(*(self._rows(b) for b in members))
        fwd_rows, bwd_rows = np.concatenate(fwd_rows), np.concatenate(bwd_rows)
        words = ad.concat([ad.take_rows(self.bwd, bwd_rows),
                           ad.take_rows(self.fwd, fwd_rows)], axis=1)
        # both final states sit at step (length - 1)
        last = np.array([(self.lengths[b] - 1) * self.batch + b for b in members])
        sentences = ad.concat([ad.take_rows(self.bwd, last),
                               ad.take_rows(self.fwd, last)], axis=1)
        return ContextMemory(sentences, words, tuple(int(self.lengths[b]) for b in members),
                             None if owner is None else tuple(owner))


def encode_bigru(encoder: BiGruEncoder, tokens: Sequence[int]) -> EncodedSentence:
    return encoder.run([tokens]).sentence(0, "bigru")


def encode_pc_bigru(encoder: BiGruEncoder, tokens: Sequence[int]) -> EncodedSentence:
    return encoder.run([tokens]).sentence(0, "pc-bigru")


def encode_context(encoder: BiGruEncoder, utterances: Sequence[Sequence[int]]) -> ContextMemory:
    if not utterances:
        return ContextMemory.empty()
    return encoder.run(utterances).memory(range(len(utterances)))


def encode_example(sentence_encoder: BiGruEncoder, context_encoder: BiGruEncoder,
                   tokens: Sequence[int], context: Sequence[Sequence[int]],
                   mode: str = "bigru", with_context: bool = True,
                   ) -> tuple[EncodedSentence, ContextMemory]:
    """Encode a target sentence and its context, in one pass when weights are shared."""
    sentence, memory, _ = encode_batch(sentence_encoder, context_encoder, [tokens], [context],
                                       mode, with_context)
    return sentence, memory


def encode_batch(sentence_encoder: BiGruEncoder, context_encoder: BiGruEncoder,
                 token_lists: Sequence[Sequence[int]],
                 context_lists: Sequence[Sequence[Sequence[int]]],
                 mode: str = "bigru", with_context: bool = True,
                 ) -> tuple[EncodedSentence, ContextMemory, np.ndarray]:
    """Encode several examples together.

    Returns the stacked DP states of all target sentences, one memory holding
    every context utterance (tagged with its example in ``owner``), and the
    example index of each target token.
    """
    if mode not in ENCODER_MODES:
        raise ValueError(f"unknown encoder mode {mode!r}")
    n = len(token_lists)
    token_owner = np.repeat(np.arange(n), [len(t) for t in token_lists])
    contexts = [list(c) for c in context_lists] if with_context else [[] for _ in range(n)]
    utterances = [u for c in contexts for u in c]
    owner = [k for k, c in enumerate(contexts) for _ in c]
    if context_encoder is sentence_encoder or not utterances:
        batch = sentence_encoder.run([*token_lists, *utterances])
        sentence = batch.sentences(range(n), mode)
        memory = batch.memory(range(n, n + len(utterances)), owner)
    else:
        sentence = sentence_encoder.run(token_lists).sentences(range(n), mode)
        memory = context_encoder.run(utterances).memory(range(len(utterances)), owner)
    return sentence, memory, token_owner


def load_pretrained(path: str, vocab: dict[str, int], table: np.ndarray) -> int:
    """Overwrite rows of ``table`` from a text embedding file; returns rows hit.

    File format: one token per line followed by ``E`` whitespace-separated reals.
    """
    hit = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != table.shape[1]:
                raise ValueError(f"{path}:{lineno}: expected {table.shape[1]} values, "
                                 f"got {len(values)}")
            idx = vocab.get(token)
            if idx is not None:
                table[idx] = np.array(values, dtype=np.float64)
                hit += 1
    return hit
