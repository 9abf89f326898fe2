import numpy as np
import pytest

from ndpr import autodiff as ad
from ndpr.data import Example
from ndpr.model import ModelConfig, NDPRModel

import reference as ref


def random_example(rng, vocab=12, max_ctx=7):
    toks = tuple(rng.integers(0, vocab, rng.integers(1, 6)).tolist())
    ctx = tuple(tuple(rng.integers(0, vocab, rng.integers(1, 5)).tolist())
                for _ in range(rng.integers(0, max_ctx + 1)))
    tags = tuple(rng.integers(0, 5, len(toks)).tolist())
    return Example(toks, tags, ctx, "c", 0)


def model(enc="bigru", att="full", seed=0, **kw):
    return NDPRModel(ModelConfig(12, 5, 6, 4, encoder=enc, attention=att, seed=seed,
                                 init_scale=0.6, **kw))


def test_config_defaults_and_validation():
    cfg = ModelConfig(10, 17)
    assert cfg.classifier_hidden == 300 and cfg.attention == "full"
    with pytest.raises(ValueError):
        ModelConfig(10, 17, encoder="lstm")
    with pytest.raises(ValueError):
        ModelConfig(10, 17, dropout=1.0)
    assert ModelConfig.from_dict({**cfg.to_dict(), "junk": 1}) == cfg


def test_classifier_input_width():
    assert model(att="none").classifier.W1.shape == (8, 8)
    assert model(att="full").classifier.W1.shape == (8, 16)


def test_init_ranges_and_zero_biases():
    m = NDPRModel(ModelConfig(50, 5, 20, 10))
    for name, p in m.named_parameters().items():
        if name.rsplit(".", 1)[-1].startswith("b"):
            assert not p.data.any(), name
        else:
            assert np.abs(p.data).max() <= 0.08, name


@pytest.mark.parametrize("enc", ["bigru", "pc-bigru"])
@pytest.mark.parametrize("att", ["full", "sentence-only", "word-only", "none"])
def test_forward_matches_reference(enc, att):
    rng = np.random.default_rng(1)
    m = model(enc, att)
    P = {n: p.data for n, p in m.named_parameters().items()}
    for _ in range(5):
        ex = random_example(rng)
        got = m.forward(ex).probs.data
        np.testing.assert_allclose(got, ref.forward(P, ex.tokens, ex.context, enc, att),
                                   atol=1e-12)


def test_separate_context_encoder():
    m = model(share_context_encoder=False)
    assert any(n.startswith("ctx_enc.") for n in m.named_parameters())
    rng = np.random.default_rng(2)
    ex = random_example(rng)
    P = {n: p.data for n, p in m.named_parameters().items()}
    states = ref.dp_states(P, ex.tokens)
    cs, cw = ref.memory(P, ex.context, prefix="ctx_enc")
    probs = m.forward(ex).probs.data
    for n, h in enumerate(states):
        x = np.concatenate([h, ref.feature(P, h, cs, cw)[0]])
        expect = ref.softmax(P["clf.W2"] @ np.tanh(P["clf.W1"] @ x + P["clf.b1"]) + P["clf.b2"])
        np.testing.assert_allclose(probs[n], expect, atol=1e-12)


@pytest.mark.parametrize("att", ["full", "sentence-only", "word-only", "none"])
def test_batch_equals_single(att):
    rng = np.random.default_rng(3)
    m = model(att=att)
    exs = [random_example(rng) for _ in range(9)]
    batch = m.forward_batch(exs).split()
    for ex, got in zip(exs, batch):
        np.testing.assert_allclose(got, m.forward(ex).probs.data, atol=1e-14)

    for p in m.parameters():
        p.zero_grad()
    for ex in exs:
        with ad.Tape():
            loss = m.loss(ex, train=False)
        ad.backward(loss)
    single = {p.name: p.grad.copy() for p in m.parameters()}
    for p in m.parameters():
        p.zero_grad()
    with ad.Tape():
        loss = m.loss_batch(exs, train=False)
    ad.backward(loss)
    for p in m.parameters():
        np.testing.assert_allclose(p.grad, single[p.name], atol=1e-12)


def test_trace_requires_single_example():
    rng = np.random.default_rng(4)
    with pytest.raises(ValueError):
        model().forward_batch([random_example(rng), random_example(rng)], trace=True)


def test_state_dict_round_trip():
    a, b = model(seed=0), model(seed=1)
    b.load_state_dict(a.state_dict())
    ex = random_example(np.random.default_rng(5))
    assert np.array_equal(a.forward(ex).probs.data, b.forward(ex).probs.data)
    with pytest.raises(KeyError):
        b.load_state_dict({})
    bad = a.state_dict()
    bad["clf.W1"] = np.zeros((1, 1))
    with pytest.raises(ValueError):
        b.load_state_dict(bad)


def test_predict_tags_shape():
    m = model()
    ex = random_example(np.random.default_rng(6))
    tags = m.predict_tags(ex)
    assert len(tags) == len(ex) and all(0 <= t < 5 for t in tags)
    assert m.predict_batch([ex, ex], chunk=1) == [tags, tags]
