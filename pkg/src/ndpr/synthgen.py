"""Deterministic synthetic pro-drop conversations.

Each conversation is a sequence of two kinds of utterances over symbolic
tokens:

* mention:  ``[w.. ] e7 v3 o5 [w.. ]`` -- an overt entity ``e7`` performs
  action ``v3`` on ``o5``; fillers ``w*`` pad either side.
* drop:     ``v3 o5 [w.. ]`` -- the same action with its subject dropped.  The
  tag on ``v3`` is the pronoun of the entity that performed ``(v3, o5)``
  earlier, ``distance`` utterances back.

An entity's pronoun is fixed by its person / number / gender attributes, so the
tag can only be recovered by locating the referent utterance in the context.
Distractor mentions may reuse the referent's verb with a different object, so
single-token matching is not enough to pick the right utterance.  With
``topic_share > 0`` one entity per conversation recurs across mentions, which
gives an order-free summary of the context a weak prior on the answer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import NONE_TAG, Conversation, Utterance

# (person, number, gender) -> pronoun tag
PRONOUN_OF = {
    ("1", "sg", "-"): "我",
    ("1", "pl", "-"): "我们",
    ("2", "sg", "-"): "你",
    ("2", "pl", "-"): "你们",
    ("3", "sg", "m"): "他",
    ("3", "sg", "f"): "她",
    ("3", "sg", "n"): "它",
    ("3", "pl", "m"): "他们",
    ("3", "pl", "f"): "她们",
    ("3", "pl", "n"): "它们",
}

THIRD_PERSON = tuple(k for k in PRONOUN_OF if k[0] == "3")


@dataclass(frozen=True)
class Entity:
    token: str
    person: str
    number: str
    gender: str

    @property
    def tag(self) -> str:
        return PRONOUN_OF[(self.person, self.number, self.gender)]


def default_entities(per_class: int = 8,
                     classes: Sequence[tuple[str, str, str]] = THIRD_PERSON) -> tuple[Entity, ...]:
    out, k = [], 0
    for attrs in classes:
        for _ in range(per_class):
            out.append(Entity(f"e{k}", *attrs))
            k += 1
    return tuple(out)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_conversations: int = 100
    utterances: tuple[int, int] = (6, 10)  # inclusive range per conversation
    entities: tuple[Entity, ...] = field(default_factory=default_entities)
    distances: tuple[int, ...] = (1, 2, 3, 4, 5)
    drop_prob: float = 0.5
    out_of_window_fraction: float = 0.0
    distractor_share: float = 0.5
    n_verbs: int = 30
    n_objects: int = 30
    n_fillers: int = 10
    fillers: tuple[int, int] = (0, 2)  # filler tokens on each side of a mention
    topic_share: float = 0.0  # chance a mention names the conversation's topic entity

    def __post_init__(self):
        if not self.distances or min(self.distances) < 1 or max(self.distances) > 5:
            raise ValueError("referent distances must lie in 1..5 (the context window)")
        for name in ("drop_prob", "out_of_window_fraction", "distractor_share", "topic_share"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        lo, hi = self.utterances
        if not 1 <= lo <= hi:
            raise ValueError("utterance range must satisfy 1 <= min <= max")
        if self.n_verbs < 2 or self.n_objects < 2 or not self.entities:
            raise ValueError("need at least two verbs, two objects and one entity")

    def entity_tags(self) -> dict[str, str]:
        return {e.token: e.tag for e in self.entities}


@dataclass(frozen=True)
class DropRecord:
    conversation_id: str
    utterance: int
    referent_utterance: int
    entity: str
    tag: str


@dataclass
class _Slot:
    kind: str = "mention"
    entity: Entity | None = None
    verb: int = -1
    obj: int = -1
    referent: int = -1


def _conversation(cfg: SynthConfig, rng: np.random.Generator, conv_id: str,
                  ) -> tuple[Conversation, list[DropRecord]]:
    length = int(rng.integers(cfg.utterances[0], cfg.utterances[1] + 1))
    slots = [_Slot() for _ in range(length)]
    claimed: set[int] = set()
    far = (6, 7, 8)
    for t in range(length):
        if rng.random() >= cfg.drop_prob:
            continue
        pool = far if rng.random() < cfg.out_of_window_fraction else cfg.distances
        dist = int(pool[rng.integers(len(pool))])
        ref = t - dist
        if ref < 0 or ref in claimed or slots[ref].kind != "mention":
            continue
        slots[t].kind, slots[t].referent = "drop", ref
        claimed.add(ref)

    mentions = [i for i, s in enumerate(slots) if s.kind == "mention"]
    n_ent = min(len(mentions), len(cfg.entities))
    picks = rng.choice(len(cfg.entities), size=n_ent, replace=False)
    verbs = rng.permutation(cfg.n_verbs)
    objs = rng.permutation(cfg.n_objects)
    topic = cfg.entities[int(rng.integers(len(cfg.entities)))]
    for k, i in enumerate(mentions):
        # entities repeat only in conversations longer than the inventory
        slots[i].entity = cfg.entities[picks[k % n_ent]]
        if cfg.topic_share and rng.random() < cfg.topic_share:
            slots[i].entity = topic
        slots[i].verb = int(verbs[k % cfg.n_verbs])
        slots[i].obj = int(objs[k % cfg.n_objects])

    drops = [t for t, s in enumerate(slots) if s.kind == "drop"]
    for t in drops:
        ref = slots[slots[t].referent]
        slots[t].verb, slots[t].obj = ref.verb, ref.obj
        if rng.random() < cfg.distractor_share:
            near = [i for i in range(max(0, t - 5), min(length, t + 3))
                    if i != t and i not in claimed and slots[i].kind == "mention"]
            if near:
                d = slots[near[rng.integers(len(near))]]
                d.verb = ref.verb
                if d.obj == ref.obj:
                    d.obj = (ref.obj + 1) % cfg.n_objects

    utterances, records = [], []
    for t, slot in enumerate(slots):
        core = [f"v{slot.verb}", f"o{slot.obj}"]
        if slot.kind == "mention":
            before = _fillers(cfg, rng)
            tokens = before + [slot.entity.token] + core + _fillers(cfg, rng)
            tags = [NONE_TAG] * len(tokens)
        else:
            entity = slots[slot.referent].entity
            tokens = core + _fillers(cfg, rng)
            tags = [entity.tag] + [NONE_TAG] * (len(tokens) - 1)
            records.append(DropRecord(conv_id, t, slot.referent, entity.token, entity.tag))
        utterances.append(Utterance(tuple(tokens), tuple(tags)))
    return Conversation(conv_id, tuple(utterances)), records


def _fillers(cfg: SynthConfig, rng: np.random.Generator) -> list[str]:
    n = int(rng.integers(cfg.fillers[0], cfg.fillers[1] + 1))
    return [f"w{int(i)}" for i in rng.integers(cfg.n_fillers, size=n)]


def generate_with_records(config: SynthConfig,
                          ) -> tuple[list[Conversation], list[DropRecord]]:
    rng = np.random.default_rng(config.seed)
    conversations, records = [], []
    for k in range(config.n_conversations):
        conv, recs = _conversation(config, rng, f"syn{config.seed}-{k}")
        conversations.append(conv)
        records.extend(recs)
    return conversations, records


def generate(config: SynthConfig) -> list[Conversation]:
    return generate_with_records(config)[0]
