"""Precision / recall / F over recovered dropped pronouns, and the variant grid.

A predicted pronoun is correct only when both its position and its tag match
the gold annotation.  ``None`` predictions and ``None`` golds never enter the
counts.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data import NONE_TAG, Conversation, Example, TagSet

# P / R / F (percent) reported for each variant on the three original corpora.
REFERENCE_RESULTS = {
    "sms": {
        "BiGRU": (40.18, 45.32, 42.67),
        "NDPR-rand": (46.47, 43.23, 43.58),
        "NDPR-PC-BiGRU": (46.34, 46.21, 46.27),
        "NDPR-W": (46.78, 46.61, 45.76),
        "NDPR-S": (46.99, 46.32, 44.89),
        "NDPR": (49.39, 44.89, 46.39),
    },
    "tc": {
        "BiGRU": (25.64, 36.82, 30.93),
        "NDPR-rand": (28.98, 41.50, 33.38),
        "NDPR-PC-BiGRU": (36.69, 40.12, 38.33),
        "NDPR-W": (38.67, 41.56, 39.64),
        "NDPR-S": (37.40, 40.32, 38.81),
        "NDPR": (39.63, 43.09, 39.77),
    },
    "baidu": {
        "BiGRU": (29.35, 42.38, 35.83),
        "NDPR-rand": (35.44, 43.82, 37.79),
        "NDPR-PC-BiGRU": (38.42, 48.01, 41.68),
        "NDPR-W": (38.60, 50.12, 43.36),
        "NDPR-S": (39.32, 46.40, 41.53),
        "NDPR": (41.04, 46.55, 42.94),
    },
}

# encoder / attention settings of each named variant
VARIANTS = {
    "BiGRU": {"encoder": "bigru", "attention": "none"},
    "NDPR": {"encoder": "bigru", "attention": "full"},
    "NDPR-S": {"encoder": "bigru", "attention": "sentence-only"},
    "NDPR-W": {"encoder": "bigru", "attention": "word-only"},
    "NDPR-PC-BiGRU": {"encoder": "pc-bigru", "attention": "full"},
}


class TagsetMismatch(ValueError):
    pass


def prf(correct: int, predicted: int, gold: int) -> tuple[float, float, float]:
    p = correct / predicted if predicted else 0.0
    r = correct / gold if gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


@dataclass
class TagScore:
    precision: float
    recall: float
    f1: float
    gold: int
    predicted: int
    correct: int


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    n_gold: int
    n_predicted: int
    n_correct: int
    per_tag: dict[str, TagScore]
    confusion: list[list[int]]  # confusion[gold][pred] over token positions
    tags: list[str]
    position_only: tuple[float, float, float] = (0.0, 0.0, 0.0)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["position_only"] = list(self.position_only)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2, sort_keys=True)

    def format_text(self, name: str = "model") -> str:
        lines = [format_table([(name, self)]), "", f"{'tag':<20}{'P(%)':>8}{'R(%)':>8}"
                 f"{'F':>8}{'gold':>7}{'pred':>7}"]
        for tag, s in self.per_tag.items():
            lines.append(f"{tag:<20}{100 * s.precision:>8.2f}{100 * s.recall:>8.2f}"
                         f"{100 * s.f1:>8.2f}{s.gold:>7d}{s.predicted:>7d}")
        p, r, f = self.position_only
        lines.append(f"position-only: P={100 * p:.2f} R={100 * r:.2f} F={100 * f:.2f}")
        return "\n".join(lines)


def score(gold: Iterable[Sequence[int]], predicted: Iterable[Sequence[int]],
          tagset: TagSet) -> EvalReport:
    """Micro and per-tag scores from aligned gold / predicted tag-id sequences."""
    n = len(tagset)
    confusion = np.zeros((n, n), dtype=np.int64)
    for g_seq, p_seq in zip(gold, predicted, strict=True):
        if len(g_seq) != len(p_seq):
            raise ValueError(f"length mismatch: {len(g_seq)} gold vs {len(p_seq)} predicted")
        np.add.at(confusion, (np.asarray(g_seq, dtype=np.intp),
                              np.asarray(p_seq, dtype=np.intp)), 1)
    none = tagset.index(NONE_TAG)
    dp = confusion.copy()
    dp[none, :] = 0
    dp[:, none] = 0
    n_correct = int(np.trace(dp))
    n_gold = int(confusion.sum(axis=1)[np.arange(n) != none].sum())
    n_pred = int(confusion.sum(axis=0)[np.arange(n) != none].sum())
    p, r, f = prf(n_correct, n_pred, n_gold)
    per_tag = {}
    for i, name in enumerate(tagset.names):
        if i == none:
            continue
        g_i, p_i, c_i = int(confusion[i].sum()), int(confusion[:, i].sum()), int(confusion[i, i])
        if g_i or p_i:
            per_tag[name] = TagScore(*prf(c_i, p_i, g_i), g_i, p_i, c_i)
    pos_correct = int(dp.sum())
    return EvalReport(p, r, f, n_gold, n_pred, n_correct, per_tag, confusion.tolist(),
                      list(tagset.names), prf(pos_correct, n_pred, n_gold))


def evaluate(model, examples: Sequence[Example], tagset: TagSet) -> EvalReport:
    if model.config.n_tags != len(tagset):
        raise TagsetMismatch(f"model predicts {model.config.n_tags} tags, "
                             f"corpus tag set has {len(tagset)}")
    preds = model.predict_batch(list(examples))
    return score([ex.tags for ex in examples], preds, tagset)


def format_table(rows: Sequence[tuple[str, EvalReport]],
                 reference: dict[str, tuple[float, float, float]] | None = None) -> str:
    """Rows of ``Model | P(%) R(%) F``; reference numbers appended when given."""
    header = f"{'Model':<16}|{'P(%)':>8}{'R(%)':>8}{'F':>8}"
    if reference:
        header += f" |{'ref P':>8}{'ref R':>8}{'ref F':>8}"
    lines = [header, "-" * len(header)]
    for name, rep in rows:
        line = f"{name:<16}|{100 * rep.precision:>8.2f}{100 * rep.recall:>8.2f}{100 * rep.f1:>8.2f}"
        if reference:
            ref = reference.get(name)
            line += " |" + ("".join(f"{v:>8.2f}" for v in ref) if ref else f"{'-':>8}" * 3)
        lines.append(line)
    return "\n".join(lines)


@dataclass
class GridRow:
    variant: str
    seed: int
    report: EvalReport


def ablation_grid(variants: Sequence[str], train_convs: Sequence[Conversation],
                  test_convs: Sequence[Conversation], config=None,
                  seeds: Sequence[int] = (0,), dev_convs: Sequence[Conversation] | None = None,
                  tagset: TagSet | None = None) -> list[GridRow]:
    """Train and test every variant with every seed on shared corpora."""
    from .training import TrainConfig, train

    base = config or TrainConfig()
    tagset = tagset or TagSet.default()
    rows = []
    for name in variants:
        try:
            settings = VARIANTS[name]
        except KeyError:
            raise ValueError(f"unknown variant {name!r}; known: {sorted(VARIANTS)}") from None
        for seed in seeds:
            cfg = base.replace(seed=seed, **settings)
            ckpt = train(cfg, train_convs, dev_convs, tagset=tagset)
            model = ckpt.build_model()
            test = ckpt.examples(test_convs)
            rows.append(GridRow(name, seed, evaluate(model, test, ckpt.tagset)))
    return rows


def grid_means(rows: Sequence[GridRow]) -> dict[str, tuple[float, float, float]]:
    by_variant: dict[str, list[EvalReport]] = {}
    for row in rows:
        by_variant.setdefault(row.variant, []).append(row.report)
    return {name: tuple(float(np.mean([getattr(r, k) for r in reps]))
                        for k in ("precision", "recall", "f1"))
            for name, reps in by_variant.items()}
