import math

import numpy as np
import pytest

from ndpr import autodiff as ad
from ndpr.autodiff import Tensor
from ndpr.classifier import Classifier, predict, sequence_loss

from gradcheck import max_relative_error


def make(in_dim=6, hidden=5, tags=4, seed=0, scale=0.8):
    return Classifier(in_dim, hidden, tags, np.random.default_rng(seed), scale)


def test_shapes_and_zero_biases():
    clf = make()
    assert clf.W1.shape == (5, 6) and clf.W2.shape == (4, 5)
    assert not clf.b1.data.any() and not clf.b2.data.any()


def test_zero_weights_give_uniform():
    clf = make()
    for p in clf.parameters():
        p.data[...] = 0.0
    probs = predict(clf, Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3)))).data
    np.testing.assert_allclose(probs, 0.25, atol=1e-15)


def test_equal_output_rows_give_half():
    clf = make(tags=2)
    clf.W2.data[1] = clf.W2.data[0]
    probs = predict(clf, Tensor(np.random.default_rng(1).normal(size=(3, 6))), None).data
    np.testing.assert_allclose(probs, 0.5, atol=1e-15)


def test_random_matches_oracle():
    clf = make()
    rng = np.random.default_rng(2)
    h, w = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    got = predict(clf, Tensor(h), Tensor(w)).data
    for n in range(3):
        x = np.concatenate([h[n], w[n]])
        z = clf.W2.data @ np.tanh(clf.W1.data @ x + clf.b1.data) + clf.b2.data
        e = np.exp(z - z.max())
        np.testing.assert_allclose(got[n], e / e.sum(), atol=1e-12)


def test_distribution_positive_and_normalised():
    clf = make(scale=5.0)
    probs = predict(clf, Tensor(np.random.default_rng(3).normal(size=(8, 6)) * 10), None).data
    assert np.all(probs > 0)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_dimension_mismatch():
    with pytest.raises(ad.ShapeError):
        predict(make(), Tensor(np.ones((1, 3))), Tensor(np.ones((1, 4))))


def test_logit_shift_invariance():
    clf = make()
    x = Tensor(np.random.default_rng(4).normal(size=(2, 6)))
    before = predict(clf, x, None).data
    clf.b2.data += 7.0
    np.testing.assert_allclose(predict(clf, x, None).data, before, atol=1e-15)


def test_dropout_only_in_training():
    clf = make()
    x = Tensor(np.random.default_rng(5).normal(size=(4, 6)))
    rng = np.random.default_rng(0)
    a = predict(clf, x, None, train=False, dropout=0.5, rng=rng).data
    b = predict(clf, x, None, train=False, dropout=0.5, rng=rng).data
    c = predict(clf, x, None, train=True, dropout=0.5, rng=rng).data
    assert np.array_equal(a, b) and not np.allclose(a, c)


def test_loss_of_one_hot_predictions_is_zero():
    probs = Tensor(np.eye(3)[[2, 0, 1]] * (1 - 1e-300) + 1e-300)
    assert sequence_loss(probs, [2, 0, 1]).item() == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("s,t", [(1, 2), (4, 17), (7, 5)])
def test_loss_of_uniform_predictions(s, t):
    probs = Tensor(np.full((s, t), 1.0 / t))
    gold = [i % t for i in range(s)]
    assert sequence_loss(probs, gold).item() == pytest.approx(s * math.log(t), rel=1e-12)


def test_loss_random_matches_brute_force():
    rng = np.random.default_rng(6)
    p = rng.dirichlet(np.ones(5), size=4)
    gold = [0, 4, 2, 2]
    expect = -sum(math.log(p[n, g]) for n, g in enumerate(gold))
    assert sequence_loss(Tensor(p), gold).item() == pytest.approx(expect, rel=1e-13)


def test_gold_outside_tagset():
    with pytest.raises((IndexError, ValueError)):
        sequence_loss(Tensor(np.full((1, 3), 1 / 3)), [3])


def test_loss_nonnegative():
    rng = np.random.default_rng(7)
    p = rng.dirichlet(np.ones(6), size=5)
    assert sequence_loss(Tensor(p), [1, 2, 3, 4, 5]).item() >= 0


def test_classifier_gradients_with_dropout():
    clf = make()
    x = ad.Parameter("x", np.random.default_rng(8).normal(size=(3, 6)))

    def build():
        probs = predict(clf, x, None, train=True, dropout=0.2, rng=np.random.default_rng(3))
        return sequence_loss(probs, [0, 3, 1])

    assert max_relative_error(build, [x, *clf.parameters()]) < 1e-5
