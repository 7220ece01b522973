import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.errors import HeadCacheError, ShapeError
from src.models.checkpoint import AdamState
from src.models.head import PARAM_NAMES, HeadParams
from src.schemas.config import HeadConfig
from src.services.head import dropout_mask, encode, forward_views, head_backward
from src.services.optimizer import adam_step
from src.services.selfcheck import check_head_gradient


def _params(rng, d=8, **kwargs):
    return HeadParams.init(rng, d, HeadConfig(init_scale=0.3, **kwargs))


def test_no_dropout_gives_identical_views(rng):
    params = _params(rng, dropout=0.0)
    x = rng.standard_normal((5, 8))
    h, h_plus, _ = forward_views(params, x, rng)
    assert_array_equal(h, h_plus)
    assert_array_equal(h, encode(params, x))


def test_dropout_views_are_reproducible(rng):
    params = _params(rng, dropout=0.1)
    x = rng.standard_normal((5, 8))
    first = forward_views(params, x, np.random.default_rng(3))
    second = forward_views(params, x, np.random.default_rng(3))
    assert_array_equal(first[0], second[0])
    assert_array_equal(first[1], second[1])
    assert not np.array_equal(first[0], first[1])


def test_inverted_dropout_is_unbiased():
    masks = dropout_mask(np.random.default_rng(0), (10_000, 8), 0.1)
    assert set(np.unique(masks)) == {0.0, 1.0 / 0.9}
    assert_allclose(masks.mean(axis=0), np.ones(8), rtol=0.02)


def test_head_gradient_matches_finite_differences():
    for seed in range(50):
        assert check_head_gradient(np.random.default_rng(seed)) < 1e-3


def test_zero_upstream_gradient(rng):
    params = _params(rng)
    x = rng.standard_normal((4, 8))
    _, _, cache = forward_views(params, x, rng)
    grads = head_backward(params, cache, np.zeros((4, 8)), np.zeros((4, 8)))
    for name in PARAM_NAMES:
        assert_array_equal(grads[name], np.zeros_like(params.arrays()[name]))


def test_linear_head_closed_form(rng):
    params = _params(rng, dropout=0.0, activation="identity", hidden_dim=5, out_dim=3)
    x = rng.standard_normal((4, 8))
    g1, g2 = rng.standard_normal((2, 4, 3))
    _, _, cache = forward_views(params, x, rng)
    grads = head_backward(params, cache, g1, g2)
    G = g1 + g2
    hidden = x @ params.W1 + params.b1
    assert_allclose(grads["W2"], hidden.T @ G, rtol=1e-12)
    assert_allclose(grads["b2"], G.sum(axis=0), rtol=1e-12)
    assert_allclose(grads["W1"], x.T @ (G @ params.W2.T), rtol=1e-12)
    assert_allclose(grads["b1"], (G @ params.W2.T).sum(axis=0), rtol=1e-12)


def test_stale_or_missing_cache_is_rejected(rng):
    params = _params(rng)
    x = rng.standard_normal((4, 8))
    _, _, cache = forward_views(params, x, rng)
    grads = head_backward(params, cache, np.ones((4, 8)), np.ones((4, 8)))
    updated, _ = adam_step(params, grads, AdamState.zeros_like(params), 1e-3)
    with pytest.raises(HeadCacheError):
        head_backward(updated, cache, np.ones((4, 8)), np.ones((4, 8)))
    with pytest.raises(HeadCacheError):
        head_backward(params, None, np.ones((4, 8)), np.ones((4, 8)))


def test_input_dimension_is_checked(rng):
    with pytest.raises(ShapeError):
        encode(_params(rng), np.ones((2, 6)))


def test_identity_head_encodes_unchanged(rng):
    x = rng.standard_normal((6, 4))
    assert_array_equal(encode(HeadParams.identity(4), x), x)
