"""Cross-module invariants checked over generated inputs."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from multiview_re import checkpoint
from multiview_re import tensor as T
from multiview_re.data import position_ids, relative_offsets
from multiview_re.fusion import top_k_gate
from multiview_re.lexicon import Lexicon, MatchTrie, match_bmes
from multiview_re.metrics import compute_metrics
from multiview_re.tensor import Tensor

from bmes_oracle import brute_force_bmes

ALPHABET = "甲乙丙丁戊"
finite = st.floats(-50, 50, allow_nan=False)


@given(st.text(ALPHABET, min_size=1, max_size=12), st.lists(st.text(ALPHABET, min_size=1, max_size=4), max_size=8, unique=True))
@settings(max_examples=200)
def test_trie_matches_substring_oracle(sentence, words):
    lex = Lexicon(words)
    got = [row.as_tuple() for row in match_bmes(list(sentence), MatchTrie(lex))]
    assert got == brute_force_bmes(list(sentence), list(lex.words))


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=finite))
def test_softmax_rows_on_simplex(z):
    p = T.softmax(Tensor(z)).data
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-9)
    np.testing.assert_allclose(np.exp(T.log_softmax(Tensor(z)).data), p, atol=1e-12)


@given(arrays(np.float64, st.integers(1, 6), elements=st.floats(0.01, 1.0)), st.data())
def test_top_k_keeps_simplex_and_argmax(raw, data):
    alpha = raw / raw.sum()
    k = data.draw(st.integers(1, len(alpha)))
    out = top_k_gate(alpha, k)
    assert np.isclose(out.sum(), 1.0, atol=1e-12) and np.count_nonzero(out) <= k
    assert out[np.argmax(alpha)] > 0


@given(st.integers(1, 40), st.data(), st.integers(1, 10))
def test_position_ids_in_range(n, data, max_pos):
    start = data.draw(st.integers(0, n - 1))
    end = data.draw(st.integers(start + 1, n))
    rel = relative_offsets(n, (start, end), max_pos)
    assert np.all(rel[start:end] == 0)
    assert np.all(np.abs(rel) <= max_pos)
    ids = position_ids(n, (start, end), max_pos)
    assert ids.min() >= 1 and ids.max() <= 2 * max_pos + 1


@given(st.dictionaries(
    st.text("abcdefgh.", min_size=1, max_size=10),
    arrays(np.float64, st.tuples(st.integers(0, 3), st.integers(1, 3)), elements=st.floats(allow_nan=False)),
    max_size=5,
))
def test_checkpoint_round_trip(params):
    blob = checkpoint.to_bytes(params, {"k": 1})
    values, meta = checkpoint.from_bytes(blob)
    assert meta["k"] == 1 and set(values) == set(params)
    for name, value in params.items():
        assert values[name].tobytes() == value.tobytes() and values[name].shape == value.shape
    assert checkpoint.to_bytes(values, meta) == blob


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=50))
def test_metrics_bounded_and_micro_is_accuracy(pairs):
    gold, pred = zip(*pairs)
    rep = compute_metrics(gold, pred, 4)
    for v in list(rep.precision) + list(rep.recall) + list(rep.f1) + [rep.macro_f1, rep.micro_f1]:
        assert 0.0 <= v <= 1.0
    assert abs(rep.micro_f1 - rep.accuracy) <= 1e-12
    assert rep.accuracy == np.mean(np.array(gold) == np.array(pred))
