import numpy as np
import pytest

from multiview_re import tensor as T
from multiview_re.errors import ConfigError, DimensionError
from multiview_re.fusion import (
    AttentionFusion,
    ConcatFusion,
    MoVEFusion,
    attention_fuse,
    concat_fuse,
    concat_views,
    move_fuse,
    top_k_gate,
)
from multiview_re.nn import ParamStore
from multiview_re.tensor import Tensor


def views(rng, n=4, d=6):
    return [Tensor(rng.normal(size=(n, d)), requires_grad=True) for _ in range(3)]


def test_concat_layout(rng):
    hc, hl, hr = views(rng)
    hm = concat_views([hc, hl, hr], 6).data
    np.testing.assert_array_equal(hm[:, 6:12], hl.data)
    zeros = concat_views([Tensor(np.zeros((1, 6)))] * 3, 6).data
    assert zeros.shape == (1, 18) and not zeros.any()
    with pytest.raises(DimensionError):
        concat_views([hc, Tensor(np.zeros((4, 5))), hr], 6)


def test_concat_is_per_token(rng):
    vs = views(rng)
    perm = np.array([2, 0, 3, 1])
    a = concat_views(vs, 6).data[perm]
    b = concat_views([Tensor(v.data[perm]) for v in vs], 6).data
    np.testing.assert_array_equal(a, b)


def test_vertex_gate_reproduces_first_expert(rng):
    move = MoVEFusion(ParamStore(0), 3, 6, 6)
    hm = concat_views(views(rng), 6)
    hf, alpha = move_fuse(hm, move, gate_logits=np.array([np.inf, -np.inf, -np.inf]))
    np.testing.assert_array_equal(alpha.data, np.tile([1.0, 0.0, 0.0], (4, 1)))
    np.testing.assert_array_equal(hf.data, move.expert_outputs(hm)[0].data)


def test_identical_experts_make_gate_irrelevant(rng):
    store = ParamStore(0)
    move = MoVEFusion(store, 3, 6, 6)
    for k in (1, 2):
        for layer in ("l1", "l2"):
            for part in ("weight", "bias"):
                store[f"fusion.expert{k}.{layer}.{part}"].data = store[f"fusion.expert0.{layer}.{part}"].data.copy()
    hm = concat_views(views(rng), 6)
    a = move(hm)[0].data
    b = move(hm, gate_logits=np.array([3.0, -1.0, 0.5]))[0].data
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_gate_is_on_the_simplex(rng):
    move = MoVEFusion(ParamStore(1), 3, 6, 6)
    _, alpha = move(concat_views(views(rng, n=50), 6))
    assert np.all(alpha.data >= 0)
    np.testing.assert_allclose(alpha.data.sum(axis=1), 1.0, atol=1e-12)


def test_expert_input_modes(rng):
    full = ParamStore(0)
    MoVEFusion(full, 3, 6, 6)
    assert full["fusion.expert0.l1.weight"].shape == (18, 18)
    own = ParamStore(0)
    m = MoVEFusion(own, 3, 6, 6, expert_input="view")
    assert own["fusion.expert0.l1.weight"].shape == (6, 6)
    vs = views(rng)
    hm = concat_views(vs, 6)
    out_view = m.expert_outputs(hm)[1].data
    hidden = np.maximum(vs[1].data @ own["fusion.expert1.l1.weight"].data + own["fusion.expert1.l1.bias"].data, 0)
    np.testing.assert_allclose(out_view, hidden @ own["fusion.expert1.l2.weight"].data + own["fusion.expert1.l2.bias"].data, atol=1e-14)
    with pytest.raises(ConfigError):
        MoVEFusion(ParamStore(0), 3, 6, 6, expert_input="slice")


def test_move_gradient(rng):
    move = MoVEFusion(ParamStore(2), 3, 4, 4)
    vs = views(rng, n=3, d=4)
    f = lambda: T.tanh(move(concat_views(vs, 4))[0]).sum()
    store_params = [move.gate.weight, move.experts[0][0].weight, move.experts[2][1].weight, move.gate.bias]
    assert T.grad_check(f, store_params + vs) <= 1e-4


def test_concat_fusion_affine(rng):
    c = ConcatFusion(ParamStore(0), 3, 6, 6)
    a, b = Tensor(rng.normal(size=(2, 18))), Tensor(rng.normal(size=(2, 18)))
    lhs = concat_fuse(a + b, c).data
    rhs = concat_fuse(a, c).data + concat_fuse(b, c).data - c.linear.bias.data
    np.testing.assert_allclose(lhs, rhs, atol=1e-13)
    c.linear.weight.data[:] = 0
    np.testing.assert_array_equal(concat_fuse(a, c).data, np.tile(c.linear.bias.data, (2, 1)))


def test_parameter_counts():
    d = 100
    move, cat, att = ParamStore(0), ParamStore(0), ParamStore(0)
    MoVEFusion(move, 3, d, d)
    ConcatFusion(cat, 3, d, d)
    AttentionFusion(att, d, d)
    # closed forms: 3 experts of (300x300 + 300) + (300x100 + 100), gate 300x3 + 3
    assert move.count() == 3 * (300 * 300 + 300 + 300 * 100 + 100) + 300 * 3 + 3 == 362_103
    assert cat.count() == 300 * 100 + 100 == 30_100
    assert att.count() == 100 + 100 * 100 + 100
    assert cat.count() < move.count()


def test_attention_identical_views(rng):
    att = AttentionFusion(ParamStore(0), 6, 6)
    v = Tensor(rng.normal(size=(4, 6)))
    out, w = attention_fuse([v, v, v], att)
    np.testing.assert_allclose(out.data, att.value(v).data, atol=1e-14)
    np.testing.assert_allclose(w.data, 1 / 3, atol=1e-15)


def test_attention_weights_and_gradient(rng):
    att = AttentionFusion(ParamStore(3), 4, 4)
    vs = views(rng, n=3, d=4)
    _, w = att(vs)
    np.testing.assert_allclose(w.data.sum(axis=1), 1.0, atol=1e-12)
    f = lambda: T.tanh(att(vs)[0]).sum()
    assert T.grad_check(f, [att.query, att.value.weight] + vs) <= 1e-4


def test_top_k_examples():
    a = np.array([0.5, 0.3, 0.2])
    np.testing.assert_array_equal(top_k_gate(a, 3), a)
    np.testing.assert_array_equal(top_k_gate(a, 1), [1.0, 0.0, 0.0])
    np.testing.assert_allclose(top_k_gate(a, 2), [0.625, 0.375, 0.0], atol=1e-15)
    np.testing.assert_array_equal(top_k_gate(np.array([0.4, 0.4, 0.2]), 1), [1.0, 0.0, 0.0])
    for k in (0, 4):
        with pytest.raises(ConfigError):
            top_k_gate(a, k)


def test_topk_in_forward_only_changes_weights(rng):
    move = MoVEFusion(ParamStore(0), 3, 6, 6)
    hm = concat_views(views(rng), 6)
    dense, alpha = move(hm)
    sparse, alpha1 = move(hm, topk=1)
    assert np.all((alpha1.data == 0) | (alpha1.data == 1))
    np.testing.assert_array_equal(np.argmax(alpha1.data, 1), np.argmax(alpha.data, 1))
    np.testing.assert_array_equal(move(hm, topk=3)[0].data, dense.data)
