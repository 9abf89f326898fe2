import warnings
from collections import Counter

import numpy as np
import pytest

from ndpr.data import NONE_TAG, TagSet, context_window, dumps_corpus, make_examples, parse_corpus
from ndpr.data import build_vocab
from ndpr.evaluation import score
from ndpr.synthgen import (PRONOUN_OF, SynthConfig, default_entities, generate,
                           generate_with_records)


def oracle_tags(conv, entity_tags):
    """Reads the referent: the context mention with the dropped clause's verb and object."""
    out = []
    for t, utt in enumerate(conv.utterances):
        tags = [NONE_TAG] * len(utt)
        if utt.tokens[0].startswith("v"):
            verb, obj = utt.tokens[0], utt.tokens[1]
            for i in context_window(t, len(conv)):
                toks = conv.utterances[i].tokens
                for j, tok in enumerate(toks):
                    if tok in entity_tags and toks[j + 1:j + 3] == (verb, obj):
                        tags[0] = entity_tags[tok]
        out.append(tags)
    return out


def tag_ids(convs, tagger, tagset):
    return [[tagset.index(t) for t in tags] for c in convs for tags in tagger(c)]


def test_zero_drop_probability_gives_only_none():
    convs = generate(SynthConfig(seed=1, n_conversations=20, drop_prob=0.0))
    assert all(c.dropped == 0 for c in convs)


def test_distance_one_referent_is_previous_utterance():
    convs, recs = generate_with_records(SynthConfig(seed=2, n_conversations=1, distances=(1,),
                                                    utterances=(12, 12), drop_prob=0.9))
    assert recs
    assert all(r.utterance - r.referent_utterance == 1 for r in recs)


def test_byte_identical_across_runs():
    cfg = SynthConfig(seed=5, n_conversations=30, topic_share=0.3)
    assert dumps_corpus(generate(cfg)) == dumps_corpus(generate(cfg))
    assert dumps_corpus(generate(cfg)) != dumps_corpus(generate(SynthConfig(seed=6,
                                                                             n_conversations=30)))


def test_generated_corpus_loads_without_warnings():
    convs = generate(SynthConfig(seed=3, n_conversations=40))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert parse_corpus(dumps_corpus(convs).split("\n")) == convs


def test_tag_is_function_of_referent_attributes():
    cfg = SynthConfig(seed=4, n_conversations=50)
    convs, recs = generate_with_records(cfg)
    by_token = {e.token: e for e in cfg.entities}
    by_id = {c.id: c for c in convs}
    for r in recs:
        e = by_token[r.entity]
        assert r.tag == PRONOUN_OF[(e.person, e.number, e.gender)]
        assert by_id[r.conversation_id].utterances[r.utterance].tags[0] == r.tag


def test_referent_token_in_exactly_one_context_utterance():
    cfg = SynthConfig(seed=7, n_conversations=60, distances=(2, 3, 4, 5))
    convs, recs = generate_with_records(cfg)
    by_id = {c.id: c for c in convs}
    for r in recs:
        conv = by_id[r.conversation_id]
        window = context_window(r.utterance, len(conv))
        hits = [i for i in window if r.entity in conv.utterances[i].tokens]
        assert hits == [r.referent_utterance]
        assert 2 <= r.utterance - r.referent_utterance <= 5


def test_distractors_share_the_verb():
    cfg = SynthConfig(seed=8, n_conversations=80, distractor_share=1.0)
    convs, recs = generate_with_records(cfg)
    by_id = {c.id: c for c in convs}
    shared = 0
    for r in recs:
        conv = by_id[r.conversation_id]
        verb = conv.utterances[r.utterance].tokens[0]
        others = [i for i in context_window(r.utterance, len(conv))
                  if i != r.referent_utterance and verb in conv.utterances[i].tokens]
        shared += bool(others)
    assert shared > len(recs) / 3


def test_oracle_reaches_perfect_f():
    cfg = SynthConfig(seed=9, n_conversations=100, distances=(2, 3, 4, 5), topic_share=0.4,
                      entities=default_entities(1))
    convs = generate(cfg)
    ts = TagSet.default()
    gold = tag_ids(convs, lambda c: [u.tags for u in c.utterances], ts)
    pred = tag_ids(convs, lambda c: oracle_tags(c, cfg.entity_tags()), ts)
    report = score(gold, pred, ts)
    assert report.n_gold > 50 and report.f1 == 1.0


def test_majority_baseline_scores_zero():
    convs = generate(SynthConfig(seed=10, n_conversations=100))
    ts = TagSet.default()
    counts = Counter(t for c in convs for u in c.utterances for t in u.tags)
    assert counts.most_common(1)[0][0] == NONE_TAG
    assert sum(1 for t in counts if t != NONE_TAG) >= 3
    gold = tag_ids(convs, lambda c: [u.tags for u in c.utterances], ts)
    assert score(gold, [[0] * len(g) for g in gold], ts).f1 == 0.0


def test_topic_share_makes_one_entity_recur():
    base = dict(seed=11, n_conversations=200, entities=default_entities(2))
    def top_share(cfg):
        shares = []
        for c in generate(cfg):
            ents = Counter(t for u in c.utterances for t in u.tokens if t.startswith("e"))
            if ents:
                shares.append(ents.most_common(1)[0][1] / sum(ents.values()))
        return np.mean(shares)
    assert top_share(SynthConfig(**base, topic_share=0.6)) > top_share(SynthConfig(**base)) + 0.2


@pytest.mark.parametrize("bad", [dict(distances=(6,)), dict(distances=()), dict(drop_prob=1.5),
                                 dict(topic_share=-0.1), dict(utterances=(3, 2))])
def test_invalid_configs(bad):
    with pytest.raises(ValueError):
        SynthConfig(**bad)


def test_out_of_window_referents():
    cfg = SynthConfig(seed=12, n_conversations=100, out_of_window_fraction=1.0,
                      utterances=(12, 14))
    _, recs = generate_with_records(cfg)
    assert recs and all(r.utterance - r.referent_utterance > 5 for r in recs)


def test_examples_build_from_generated_corpus():
    convs = generate(SynthConfig(seed=13, n_conversations=5))
    ex = make_examples(convs, build_vocab(convs), TagSet.default())
    assert len(ex) == sum(len(c) for c in convs)
