import math

import numpy as np
import pytest

from multiview_re import tensor as T
from multiview_re.classifier import Classifier, classify, loss, nll_from_logits, predict, sentence_pool
from multiview_re.errors import ConfigError, EmptyPoolError
from multiview_re.nn import ParamStore
from multiview_re.tensor import Tensor


def test_pool_singleton_and_duplicates(rng):
    h = rng.normal(size=(1, 1, 5))
    np.testing.assert_array_equal(sentence_pool(Tensor(h), np.ones((1, 1), bool)).data, h[:, 0])
    dup = np.concatenate([h, h], axis=1)
    np.testing.assert_array_equal(sentence_pool(Tensor(dup), np.ones((1, 2), bool)).data, h[:, 0])


def test_pads_never_selected(rng):
    h = rng.normal(size=(1, 3, 4))
    base = sentence_pool(Tensor(h), np.ones((1, 3), bool)).data
    padded = np.concatenate([h, np.full((1, 2, 4), 100.0)], axis=1)
    mask = np.array([[True, True, True, False, False]])
    assert sentence_pool(Tensor(padded), mask).data.tobytes() == base.tobytes()
    with pytest.raises(EmptyPoolError):
        sentence_pool(Tensor(h), np.zeros((1, 3), bool))
    with pytest.raises(ConfigError):
        sentence_pool(Tensor(h), np.ones((1, 3), bool), mode="sum")


def test_mean_pooling_option(rng):
    h = rng.normal(size=(1, 3, 4))
    out = sentence_pool(Tensor(h), np.array([[True, True, False]]), mode="mean").data
    np.testing.assert_allclose(out, h[:, :2].mean(axis=1), atol=1e-15)


def test_zero_classifier_is_uniform_and_bias_dominates():
    clf = Classifier(ParamStore(0), 4, 5)
    clf.weight.data[:] = 0
    clf.bias.data[:] = 0
    probs = classify(Tensor(np.ones(5)), clf).data
    np.testing.assert_allclose(probs, 0.25, atol=1e-15)
    assert predict(probs) == 0
    clf.bias.data[:] = [0, 10, 0, 0]
    assert predict(classify(Tensor(np.ones(5)), clf).data) == 1


def test_probabilities_on_simplex(rng):
    clf = Classifier(ParamStore(1), 7, 5)
    probs = clf(Tensor(rng.normal(size=(6, 5)) * 5)).data
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(probs >= 0)


def test_loss_closed_forms():
    y = 4
    uniform = Tensor(np.full((2, y), 1.0 / y))
    assert loss(uniform, np.array([0, 3])).item() == pytest.approx(math.log(y), abs=1e-15)
    sure = Tensor(np.array([[0.0, 1.0, 0.0, 0.0]]))
    assert loss(sure, np.array([1])).item() == 0.0


def test_hand_computed_nll():
    probs = np.array([
        [0.1, 0.2, 0.3, 0.4],
        [0.25, 0.25, 0.25, 0.25],
        [0.7, 0.1, 0.1, 0.1],
    ])
    labels = np.array([3, 0, 1])
    # -(ln .4 + ln .25 + ln .1) / 3, summed with the standard library
    expected = -(math.log(0.4) + math.log(0.25) + math.log(0.1)) / 3
    assert loss(Tensor(probs), labels).item() == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(math.log(100) / 3, abs=1e-15)
    assert nll_from_logits(Tensor(np.log(probs)), labels).item() == pytest.approx(expected, abs=1e-12)


def test_logit_gradient_is_probs_minus_one_hot(rng):
    logits = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    labels = np.array([2, 0, 3])
    nll_from_logits(logits, labels).backward()
    probs = T.softmax(Tensor(logits.data)).data
    expected = (probs - np.eye(4)[labels]) / 3
    np.testing.assert_allclose(logits.grad, expected, atol=1e-15)
    assert T.grad_check(lambda: nll_from_logits(logits, labels), [logits]) <= 1e-6


def test_shift_invariance(rng):
    z = rng.normal(size=(3, 4))
    labels = np.array([0, 1, 2])
    a = nll_from_logits(Tensor(z), labels).item()
    b = nll_from_logits(Tensor(z + 17.0), labels).item()
    assert a == pytest.approx(b, abs=1e-12)
    np.testing.assert_allclose(T.softmax(Tensor(z)).data, T.softmax(Tensor(z + 17.0)).data, atol=1e-15)


def test_loss_positive_unless_certain(rng):
    z = rng.normal(size=(5, 3))
    assert nll_from_logits(Tensor(z), np.zeros(5, dtype=int)).item() > 0
