"""Corpus ingestion, tag inventory, vocabulary and example assembly.

Corpus files are JSON lines, one conversation per line::

    {"id": "c1", "utterances": [{"tokens": ["A", "B"], "tags": ["None", "它"]}]}

A tag on token ``n`` names the pronoun dropped immediately before that token;
``"None"`` (or ``null``) marks positions without one.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NONE_TAG = "None"
OTHER_TAG = "other"

CONCRETE_PRONOUNS = ("我", "我们", "你", "你们", "他", "她", "它", "他们", "她们", "它们")
ABSTRACT_PRONOUNS = ("event", "previous_utterance", "generic", "existential", "pleonastic")

CONTEXT_BEFORE = 5
CONTEXT_AFTER = 2


class CorpusError(ValueError):
    """Malformed corpus input."""


class CorpusWarning(UserWarning):
    """Recoverable corpus problem (dropped utterance, remapped tag)."""


@dataclass(frozen=True)
class TagSet:
    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if not names or names[0] != NONE_TAG:
            raise ValueError(f"tag set must start with {NONE_TAG!r}")
        if len(set(names)) != len(names):
            raise ValueError("tag names must be unique")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @classmethod
    def default(cls) -> "TagSet":
        """None, the 10 concrete pronouns, 5 abstract types and ``other`` (17 tags)."""
        return cls((NONE_TAG, *CONCRETE_PRONOUNS, *ABSTRACT_PRONOUNS, OTHER_TAG))

    @classmethod
    def concrete(cls) -> "TagSet":
        return cls((NONE_TAG, *CONCRETE_PRONOUNS))

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"tag {name!r} not in tag set") from None

    @property
    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.names).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Utterance:
    tokens: tuple[str, ...]
    tags: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def dropped(self) -> int:
        return sum(t != NONE_TAG for t in self.tags)


@dataclass(frozen=True)
class Conversation:
    id: str
    utterances: tuple[Utterance, ...]

    def __len__(self) -> int:
        return len(self.utterances)

    @property
    def dropped(self) -> int:
        return sum(u.dropped for u in self.utterances)

    def to_json(self) -> dict:
        return {"id": self.id,
                "utterances": [{"tokens": list(u.tokens), "tags": list(u.tags)}
                               for u in self.utterances]}


def _parse_conversation(obj, lineno: int, tagset: TagSet) -> Conversation:
    if not isinstance(obj, dict) or "utterances" not in obj:
        raise CorpusError(f"line {lineno}: expected an object with 'utterances'")
    conv_id = str(obj.get("id", f"line{lineno}"))
    utterances = []
    for u_idx, raw in enumerate(obj["utterances"]):
        where = f"line {lineno}, conversation {conv_id!r}, utterance {u_idx}"
        try:
            tokens, tags = raw["tokens"], raw["tags"]
        except (TypeError, KeyError):
            raise CorpusError(f"{where}: utterance needs 'tokens' and 'tags'") from None
        if len(tokens) != len(tags):
            raise CorpusError(f"{where}: {len(tokens)} tokens but {len(tags)} tags")
        if not tokens:
            warnings.warn(f"{where}: empty utterance dropped", CorpusWarning, stacklevel=3)
            continue
        clean = []
        for tag in tags:
            tag = NONE_TAG if tag is None else str(tag)
            if tag not in tagset:
                if OTHER_TAG not in tagset:
                    raise CorpusError(f"{where}: unknown tag {tag!r}")
                warnings.warn(f"{where}: unknown tag {tag!r} mapped to {OTHER_TAG!r}",
                              CorpusWarning, stacklevel=3)
                tag = OTHER_TAG
            clean.append(tag)
        utterances.append(Utterance(tuple(str(t) for t in tokens), tuple(clean)))
    return Conversation(conv_id, tuple(utterances))


def parse_corpus(lines: Iterable[str], tagset: TagSet | None = None) -> list[Conversation]:
    tagset = tagset or TagSet.default()
    conversations = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        conversations.append(_parse_conversation(obj, lineno, tagset))
    return conversations


def load_corpus(path: str | Path, tagset: TagSet | None = None) -> list[Conversation]:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus(fh, tagset)


def dumps_corpus(conversations: Iterable[Conversation]) -> str:
    return "".join(json.dumps(c.to_json(), ensure_ascii=False) + "\n" for c in conversations)


def save_corpus(conversations: Iterable[Conversation], path: str | Path) -> None:
    Path(path).write_text(dumps_corpus(conversations), encoding="utf-8")


@dataclass
class Vocabulary:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    PAD = 0
    UNK = 1
    RESERVED = ("<pad>", "<unk>")

    def __post_init__(self):
        if tuple(self.tokens[:2]) != self.RESERVED:
            raise ValueError("vocabulary must start with the reserved <pad>, <unk> entries")
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def lookup(self, token: str) -> int:
        return self.index.get(token, self.UNK)

    def encode(self, tokens: Sequence[str]) -> tuple[int, ...]:
        return tuple(self.index.get(t, self.UNK) for t in tokens)


def build_vocab(conversations: Sequence[Conversation], min_count: int = 1) -> Vocabulary:
    """Vocabulary over the given (training) conversations; rarer tokens map to UNK."""
    counts = Counter(tok for c in conversations for u in c.utterances for tok in u.tokens)
    kept = sorted((t for t, n in counts.items() if n >= min_count),
                  key=lambda t: (-counts[t], t))
    return Vocabulary([*Vocabulary.RESERVED, *kept])


def context_window(t: int, length: int, before: int = CONTEXT_BEFORE,
                   after: int = CONTEXT_AFTER) -> list[int]:
    """Indices of the context utterances of sentence ``t``; truncated at the edges."""
    return [*range(max(0, t - before), t), *range(t + 1, min(length, t + after + 1))]


@dataclass(frozen=True)
class Example:
    tokens: tuple[int, ...]
    tags: tuple[int, ...]
    context: tuple[tuple[int, ...], ...]
    conversation_id: str
    index: int
    context_indices: tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.tokens)


def make_examples(conversations: Sequence[Conversation], vocab: Vocabulary,
                  tagset: TagSet) -> list[Example]:
    examples = []
    for conv in conversations:
        encoded = [vocab.encode(u.tokens) for u in conv.utterances]
        for t, utt in enumerate(conv.utterances):
            window = context_window(t, len(conv))
            examples.append(Example(
                tokens=encoded[t],
                tags=tuple(tagset.index(tag) for tag in utt.tags),
                context=tuple(encoded[i] for i in window),
                conversation_id=conv.id,
                index=t,
                context_indices=tuple(window),
            ))
    return examples


def split_dev(conversations: Sequence[Conversation], fraction: float = 0.167,
              rng: np.random.Generator | None = None,
              ) -> tuple[list[Conversation], list[Conversation]]:
    """Hold out ``fraction`` of the conversations (at least one) as a dev split."""
    convs = list(conversations)
    if len(convs) < 2:
        return convs, []
    n_dev = min(len(convs) - 1, max(1, math.ceil(fraction * len(convs))))
    order = np.arange(len(convs)) if rng is None else rng.permutation(len(convs))
    dev_ids = set(order[:n_dev].tolist())
    return ([c for i, c in enumerate(convs) if i not in dev_ids],
            [c for i, c in enumerate(convs) if i in dev_ids])
