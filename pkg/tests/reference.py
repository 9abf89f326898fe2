"""Straight-line numpy reference of the tagger's forward pass.

Written independently of the package: plain per-token loops, explicit GRU
steps and hand-rolled softmax.  Only the parameter dictionary (name -> array)
is shared with the model under test.
"""

from __future__ import annotations

import math

import numpy as np


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def softmax(v):
    e = np.exp(v - np.max(v))
    return e / e.sum()


def gru(P, prefix, xs):
    d = P[f"{prefix}.b_z"].shape[0]
    h = np.zeros(d)
    out = []
    for x in xs:
        z = sigmoid(P[f"{prefix}.W_z"] @ x + P[f"{prefix}.U_z"] @ h + P[f"{prefix}.b_z"])
        r = sigmoid(P[f"{prefix}.W_r"] @ x + P[f"{prefix}.U_r"] @ h + P[f"{prefix}.b_r"])
        c = np.tanh(P[f"{prefix}.W_h"] @ x + P[f"{prefix}.U_h"] @ (r * h) + P[f"{prefix}.b_h"])
        h = (1 - z) * h + z * c
        out.append(h)
    return out


def bigru(P, prefix, ids):
    """Per-position forward states and backward states (aligned to positions)."""
    xs = [P["embedding"][i] for i in ids]
    fwd = gru(P, f"{prefix}.fwd", xs)
    bwd = gru(P, f"{prefix}.bwd", xs[::-1])[::-1]
    return fwd, bwd


def dp_states(P, ids, encoder="bigru", prefix="enc"):
    fwd, bwd = bigru(P, prefix, ids)
    states = []
    for n in range(len(ids)):
        if encoder == "bigru":
            prev = fwd[n]
        else:
            prev = fwd[n - 1] if n > 0 else np.zeros_like(fwd[0])
        states.append(np.concatenate([bwd[n], prev]))
    return states


def memory(P, context, prefix="enc"):
    """Sentence vectors ``[bwd_first, fwd_last]`` and word vectors ``[bwd_j, fwd_j]``."""
    cs, cw = [], []
    for ids in context:
        fwd, bwd = bigru(P, prefix, ids)
        cs.append(np.concatenate([bwd[0], fwd[-1]]))
        cw.append([np.concatenate([bwd[j], fwd[j]]) for j in range(len(ids))])
    return cs, cw


def feature(P, h, cs, cw, attention="full"):
    """Context feature of one token, plus its sentence and word weights."""
    m = len(cs)
    if m == 0:
        return np.zeros_like(h), [], []
    if attention in ("full", "sentence-only"):
        a_s = softmax(np.array([h @ c for c in cs]))
        s = sum(a_s[i] * cs[i] for i in range(m))
        if attention == "sentence-only":
            return s, list(a_s), []
        query = P["attn.W_update"] @ np.concatenate([h, s]) + P["attn.b_update"]
    else:
        a_s = np.full(m, 1.0 / m)
        query = h
    w_rel, b_rel = P["attn.w_rel"][0], P["attn.b_rel"][0]
    a_w, w = [], np.zeros_like(h)
    for i in range(m):
        scores = np.array([w_rel @ (query * c) + b_rel for c in cw[i]])
        weights = softmax(scores)
        a_w.append(list(weights))
        t = sum(weights[j] * cw[i][j] for j in range(len(cw[i])))
        w = w + a_s[i] * t
    return w, list(a_s), a_w


def forward(P, tokens, context, encoder="bigru", attention="full"):
    """Tag distributions of every token, shape (n, T)."""
    states = dp_states(P, tokens, encoder)
    cs, cw = memory(P, context) if attention != "none" else ([], [])
    rows = []
    for h in states:
        if attention == "none":
            x = h
        else:
            x = np.concatenate([h, feature(P, h, cs, cw, attention)[0]])
        hidden = np.tanh(P["clf.W1"] @ x + P["clf.b1"])
        rows.append(softmax(P["clf.W2"] @ hidden + P["clf.b2"]))
    return np.array(rows)


def loss(P, tokens, tags, context, encoder="bigru", attention="full"):
    probs = forward(P, tokens, context, encoder, attention)
    return -sum(math.log(probs[n, t]) for n, t in enumerate(tags))
