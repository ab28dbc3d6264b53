"""Gated attention pooling, baseline poolers, and the classifier head."""

import numpy as np
import pytest

import goat_wsi.autodiff as ad
from goat_wsi.autodiff import Tensor
from goat_wsi.errors import ContractError
from goat_wsi.pooling import (HeadParams, PoolingParams, baseline_pool, classify,
                              gated_attention_scores, pool)

RNG = np.random.default_rng(29)


def pooling_params(rng, d_model, d_attn=None, scale=0.5):
    d_attn = d_attn or max(1, d_model // 2)
    return PoolingParams(
        w=Tensor(scale * rng.normal(size=(1, d_attn)), requires_grad=True),
        v=Tensor(scale * rng.normal(size=(d_attn, d_model)), requires_grad=True),
        u=Tensor(scale * rng.normal(size=(d_attn, d_model)), requires_grad=True))


def head_params(rng, d_model, d_ffn, n_classes, scale=0.5, zero=False):
    mk = (lambda s: np.zeros(s)) if zero else (lambda s: scale * rng.normal(size=s))
    return HeadParams(w1=Tensor(mk((d_model, d_ffn)), requires_grad=True),
                      b1=Tensor(mk((d_ffn,)), requires_grad=True),
                      w2=Tensor(mk((d_ffn, d_model)), requires_grad=True),
                      b2=Tensor(mk((d_model,)), requires_grad=True),
                      w_cls=Tensor(mk((d_model, n_classes)), requires_grad=True),
                      b_cls=Tensor(mk((n_classes,)), requires_grad=True))


# ---------------------------------------------------------------------------
# attention scores


def test_identical_rows_get_uniform_weights():
    h = Tensor(np.tile(RNG.normal(size=6), (5, 1)))
    alpha = gated_attention_scores(h, pooling_params(RNG, 6)).data
    assert np.allclose(alpha, 0.2, atol=1e-12)


def test_single_node_gets_weight_one():
    h = Tensor(RNG.normal(size=(1, 6)))
    alpha = gated_attention_scores(h, pooling_params(RNG, 6)).data
    assert np.array_equal(alpha, [1.0])


def test_scores_match_direct_formula():
    p = pooling_params(RNG, 4, d_attn=3)
    h = RNG.normal(size=(4, 4))
    raw = np.array([
        (p.w.data @ (np.tanh(p.v.data @ hi)
                     * (1 / (1 + np.exp(-(p.u.data @ hi)))))).item()
        for hi in h
    ])
    expected = np.exp(raw - raw.max())
    expected /= expected.sum()
    alpha = gated_attention_scores(Tensor(h), p).data
    assert np.allclose(alpha, expected, atol=1e-12)


def test_scores_positive_and_normalized():
    for n in (1, 2, 7, 30):
        h = Tensor(RNG.normal(size=(n, 5)) * 3)
        alpha = gated_attention_scores(h, pooling_params(RNG, 5)).data
        assert (alpha > 0).all()
        assert abs(alpha.sum() - 1.0) < 1e-12


# ---------------------------------------------------------------------------
# pooling


def test_uniform_weights_give_mean():
    h = RNG.normal(size=(4, 5))
    out = pool(Tensor(h), Tensor(np.full(4, 0.25)))
    assert np.allclose(out.data, h.mean(axis=0), atol=1e-15)


def test_one_hot_weights_select_row():
    h = RNG.normal(size=(4, 5))
    alpha = np.zeros(4)
    alpha[2] = 1.0
    out = pool(Tensor(h), Tensor(alpha))
    assert np.array_equal(out.data, h[2])


def test_pool_is_coordinatewise_convex():
    h = RNG.normal(size=(6, 5))
    raw = np.abs(RNG.normal(size=6))
    out = pool(Tensor(h), Tensor(raw / raw.sum())).data
    assert (out >= h.min(axis=0) - 1e-12).all()
    assert (out <= h.max(axis=0) + 1e-12).all()


def test_pool_rejects_bad_weights():
    h = Tensor(RNG.normal(size=(3, 5)))
    with pytest.raises(ContractError, match="sum"):
        pool(h, Tensor(np.array([0.5, 0.5, 0.5])))
    with pytest.raises(ContractError, match="does not match"):
        pool(h, Tensor(np.array([0.5, 0.5])))


def test_pooled_embedding_is_permutation_invariant():
    rng = np.random.default_rng(41)
    for _ in range(5):
        h = rng.normal(size=(8, 6))
        p = pooling_params(rng, 6)
        ref = pool(Tensor(h), gated_attention_scores(Tensor(h), p)).data
        perm = rng.permutation(8)
        out = pool(Tensor(h[perm]), gated_attention_scores(Tensor(h[perm]), p)).data
        assert np.allclose(out, ref, atol=1e-10)


# ---------------------------------------------------------------------------
# classifier head


def test_zero_head_gives_zero_logits():
    h = Tensor(RNG.normal(size=5))
    logits = classify(h, head_params(RNG, 5, 7, 3, zero=True))
    assert np.array_equal(logits.data, np.zeros(3))
    assert logits.data.shape == (3,)


def test_head_supports_two_and_three_classes():
    h = Tensor(RNG.normal(size=5))
    for n_cls in (2, 3):
        logits = classify(h, head_params(RNG, 5, 7, n_cls))
        assert logits.data.shape == (n_cls,)


def test_head_matches_direct_evaluation():
    p = head_params(RNG, 4, 6, 2)
    h = RNG.normal(size=4)
    hid = np.maximum(h @ p.w1.data + p.b1.data, 0)
    expected = (hid @ p.w2.data + p.b2.data) @ p.w_cls.data + p.b_cls.data
    out = classify(Tensor(h), p).data
    assert np.allclose(out, expected, atol=1e-12)


def test_head_gradient_check():
    p = head_params(RNG, 4, 6, 3)
    h = Tensor(RNG.normal(size=4))

    def f(w):
        p.w1 = w
        out = classify(h, p)
        return ad.tsum(ad.mul(out, out))

    assert ad.grad_check(f, p.w1) < 1e-4


# ---------------------------------------------------------------------------
# baseline poolers


def test_max_pool_example():
    out = baseline_pool(Tensor(np.array([[1.0, 5.0], [3.0, 2.0]])), "max")
    assert np.array_equal(out.data, [3.0, 5.0])


def test_mean_and_abmil_on_identical_rows():
    row = RNG.normal(size=5)
    h = Tensor(np.tile(row, (4, 1)))
    assert np.allclose(baseline_pool(h, "mean").data, row, atol=1e-15)
    out = baseline_pool(h, "abmil", pooling_params(RNG, 5)).data
    assert np.allclose(out, row, atol=1e-12)


def test_baseline_pool_rejects_misuse():
    h = Tensor(RNG.normal(size=(3, 5)))
    with pytest.raises(ContractError, match="unknown pooling mode"):
        baseline_pool(h, "sum")
    with pytest.raises(ContractError, match="requires PoolingParams"):
        baseline_pool(h, "abmil")
