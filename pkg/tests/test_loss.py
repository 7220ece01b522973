import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.errors import ShapeError
from src.services.gradcheck import central_difference, relative_error
from src.services.loss import (
    LITERAL_EPS,
    LossBatch,
    in_batch_negative_indices,
    in_batch_negatives,
    loss_and_grad,
    loss_backward,
    loss_forward,
)
from src.services.noise import NoiseBank
from src.services.selfcheck import check_loss_gradient, random_mask
from src.services.weighting import WeightMask


def _views(rng, batch_size=4, d=8):
    anchors = rng.standard_normal((batch_size, d))
    return anchors, anchors + 0.3 * rng.standard_normal((batch_size, d))


def _cos(a, b):
    return a @ b / (np.linalg.norm(a) * np.linalg.norm(b))


def naive_info_nce(anchors, positives, tau):
    """SimCSE objective with both views of the other sentences as negatives."""
    B = len(anchors)
    total = 0.0
    for i in range(B):
        positive = math.exp(_cos(anchors[i], positives[i]) / tau)
        others = [v for j in range(B) if j != i for v in (anchors[j], positives[j])]
        denominator = positive + sum(math.exp(_cos(anchors[i], v) / tau) for v in others)
        total += -math.log(positive / denominator)
    return total / B


def test_single_negative_closed_form():
    anchor = np.array([[1.0, 0.0]])
    positive = np.array([[0.9, math.sqrt(1 - 0.81)]])
    bank = NoiseBank(np.array([[0.5, math.sqrt(0.75)]]))
    batch = LossBatch(anchor, positive, WeightMask.ones(1, 0, 1), tau=0.05, bank=bank)
    assert loss_forward(batch) == pytest.approx(math.log1p(math.exp(-8.0)), rel=1e-9)


def test_everything_masked_gives_zero_loss_and_gradient(rng):
    anchors, positives = _views(rng, 3)
    batch = LossBatch(anchors, positives, WeightMask(np.zeros((3, 4)), num_in_batch=4), tau=0.05)
    loss, d_anchor, d_positive = loss_and_grad(batch)
    assert loss == 0.0
    assert_array_equal(d_anchor, np.zeros_like(anchors))
    assert_array_equal(d_positive, np.zeros_like(positives))


def test_reduces_to_info_nce(rng):
    for _ in range(10):
        anchors, positives = _views(rng)
        batch = LossBatch(anchors, positives, WeightMask.ones(4, 6), tau=0.05)
        assert loss_forward(batch) == pytest.approx(naive_info_nce(anchors, positives, 0.05), abs=1e-9)


def test_gradient_matches_finite_differences():
    for seed in range(100):
        assert check_loss_gradient(np.random.default_rng(seed)) < 1e-4


def test_gradient_single_view_and_literal(rng):
    # tau=0.5 keeps the gradients well above finite-difference roundoff
    for _ in range(5):
        anchors, positives = _views(rng)
        bank = NoiseBank(rng.standard_normal((2, 8)))
        for single_view, literal in [(True, False), (False, True), (True, True)]:
            q = 3 if single_view else 6
            mask = random_mask(rng, 4, q, 2)
            batch = LossBatch(anchors, positives, mask, 0.5, bank, single_view=single_view, literal=literal)
            d_anchor, d_positive = loss_backward(batch)
            numeric_anchor = central_difference(
                lambda v: loss_forward(LossBatch(v, positives, mask, 0.5, bank, single_view, literal)), anchors
            )
            numeric_positive = central_difference(
                lambda v: loss_forward(LossBatch(anchors, v, mask, 0.5, bank, single_view, literal)), positives
            )
            assert relative_error(d_anchor, numeric_anchor) < 1e-5
            assert relative_error(d_positive, numeric_positive) < 1e-5


def test_literal_form(rng):
    anchors, positives = _views(rng, 2, 4)
    batch = LossBatch(anchors, positives, WeightMask.ones(2, 2), tau=0.5, literal=True)
    expected = 0.0
    for i in range(2):
        j = 1 - i
        negatives = sum(math.exp(_cos(anchors[i], v) / 0.5) for v in (anchors[j], positives[j]))
        expected += -_cos(anchors[i], positives[i]) / 0.5 + math.log(negatives + LITERAL_EPS)
    assert loss_forward(batch) == pytest.approx(expected / 2, abs=1e-12)


def test_loss_is_scale_invariant(rng):
    anchors, positives = _views(rng)
    mask = random_mask(rng, 4, 6, 0)
    scaled = anchors.copy()
    scaled[1] *= 2.0
    assert loss_forward(LossBatch(scaled, positives, mask, 0.05)) == pytest.approx(
        loss_forward(LossBatch(anchors, positives, mask, 0.05)), abs=1e-12
    )


def test_loss_is_never_negative(rng):
    for _ in range(20):
        anchors, positives = _views(rng)
        mask = random_mask(rng, 4, 6, 3, keep=0.5)
        bank = NoiseBank(rng.standard_normal((3, 8)))
        assert loss_forward(LossBatch(anchors, positives, mask, 0.05, bank)) >= 0.0


def test_masked_noise_negatives_are_inert(rng):
    for case in range(50):
        single_view, literal = case % 2 == 1, case % 3 == 2
        q = 3 if single_view else 6
        anchors, positives = _views(rng)
        alpha = random_mask(rng, 4, q, 5).alpha.copy()
        masked = rng.choice(5, size=int(rng.integers(1, 5)), replace=False)
        alpha[:, q + masked] = 0.0
        mask = WeightMask(alpha, num_in_batch=q)
        bank = rng.standard_normal((5, 8))
        moved = bank.copy()
        moved[masked] = rng.uniform(1.0, 100.0) * rng.standard_normal((len(masked), 8))

        first = loss_and_grad(LossBatch(anchors, positives, mask, 0.05, NoiseBank(bank), single_view, literal))
        second = loss_and_grad(LossBatch(anchors, positives, mask, 0.05, NoiseBank(moved), single_view, literal))
        assert first[0] == second[0]
        assert_array_equal(first[1], second[1])
        assert_array_equal(first[2], second[2])


@pytest.mark.parametrize("batch_size, expected", [(1, 0), (2, 2), (4, 6)])
def test_in_batch_negative_counts(rng, batch_size, expected):
    views = rng.standard_normal((2 * batch_size, 3))
    for i in range(batch_size):
        assert in_batch_negatives(views, i).shape == (expected, 3)


def test_in_batch_negatives_exclude_own_sentence():
    index = in_batch_negative_indices(4)
    for i in range(4):
        assert i not in set(index[i] % 4)
        assert sorted(index[i] % 4) == sorted([j for j in range(4) if j != i] * 2)
    assert in_batch_negative_indices(4, single_view=True).shape == (4, 3)


def test_mask_shape_is_checked(rng):
    anchors, positives = _views(rng)
    with pytest.raises(ShapeError):
        LossBatch(anchors, positives, WeightMask.ones(4, 3), tau=0.05)
