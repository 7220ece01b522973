import numpy as np
import pytest
from numpy.testing import assert_array_equal

from src.config import PHI_OFF
from src.errors import ConfigurationError, ShapeError
from src.models.embeddings import EmbeddingMatrix
from src.services.loss import in_batch_negative_indices
from src.services.noise import NoiseBank
from src.services.similarity import cosine_sim
from src.services.weighting import ComplementaryScorer, WeightMask, compute_weights, gate


@pytest.mark.parametrize("sim, expected", [(0.95, 0.0), (0.89, 1.0), (0.90, 0.0)])
def test_gate_boundary_belongs_to_masked_branch(sim, expected):
    assert gate(np.array([sim]), 0.9)[0] == expected


def _scorer(rng, n=8, d=4, phi=0.3):
    return ComplementaryScorer.from_reference(EmbeddingMatrix(rng.standard_normal((n, d))), phi)


def test_score_pair(rng):
    scorer = _scorer(rng)
    assert scorer.score_pair(3, 3) == pytest.approx(1.0, abs=1e-7)
    orthogonal = ComplementaryScorer.from_reference(EmbeddingMatrix(np.eye(3)), 0.9)
    assert orthogonal.score_pair(0, 2) == 0.0
    i, j = 1, 5
    expected = cosine_sim(scorer.space[i], scorer.space[j])
    assert scorer.score_pair(i, j) == pytest.approx(expected, abs=1e-15)


def test_score_noise(rng):
    scorer = ComplementaryScorer.from_reference(EmbeddingMatrix(np.eye(4)), 0.9)
    assert scorer.score_noise(2, np.eye(4)[2] * 5) == pytest.approx(1.0)
    assert scorer.score_noise(2, np.eye(4)[0]) == 0.0
    with pytest.raises(ShapeError):
        scorer.score_noise(2, np.ones(3))


def test_random_noise_is_rarely_similar():
    reference = np.zeros((1, 64))
    reference[0, 0] = 1.0
    scorer = ComplementaryScorer.from_reference(EmbeddingMatrix(reference), 0.9)
    for seed in range(1000):
        noise = np.random.default_rng(seed).standard_normal(64)
        assert abs(scorer.score_noise(0, noise)) < 0.5


def _mask_oracle(space, anchors, negatives, bank, phi):
    rows = []
    for r, a in enumerate(anchors):
        row = [0.0 if cosine_sim(space[a], space[n]) >= phi else 1.0 for n in negatives[r]]
        row += [0.0 if cosine_sim(space[a], v) >= phi else 1.0 for v in bank]
        rows.append(row)
    return np.array(rows)


def _lattice_rows(rng, n):
    """Rows of norm exactly 2, so every cosine between them is exact in floating point."""
    signs = rng.choice([-1.0, 1.0], size=(n, 4))
    axes = 2.0 * np.eye(4)[rng.integers(4, size=n)] * rng.choice([-1.0, 1.0], size=(n, 1))
    return np.where(rng.random((n, 1)) < 0.5, signs, axes)


def test_compute_weights_matches_scalar_loop():
    anchors = np.arange(8)
    negatives = anchors[in_batch_negative_indices(8) % 8]
    boundary_hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        if seed % 2 == 0:
            space = _lattice_rows(rng, 8)
            vectors = _lattice_rows(rng, 3)
            # phi equal to a similarity that actually occurs
            sims = [cosine_sim(space[a], space[n]) for a in anchors for n in negatives[a]]
            phi = float(rng.choice(sims))
        else:
            space = rng.standard_normal((8, 4))
            vectors = rng.standard_normal((3, 4))
            phi = float(rng.uniform(-0.5, 0.9))
        scorer = ComplementaryScorer.from_reference(EmbeddingMatrix(space), phi)
        mask = compute_weights(scorer, anchors, negatives, NoiseBank(vectors))
        expected = _mask_oracle(scorer.space, anchors, negatives, vectors, phi)
        assert mask.num_in_batch == 14 and mask.num_noise == 3
        assert_array_equal(mask.alpha, expected)
        if seed % 2 == 0:
            at_boundary = np.array([[cosine_sim(space[a], space[n]) == phi for n in negatives[a]] for a in anchors])
            assert np.all(mask.alpha[:, :14][at_boundary] == 0.0)
            boundary_hits += int(at_boundary.sum())
    assert boundary_hits >= 50


def test_weights_are_monotone_in_phi(rng):
    space = EmbeddingMatrix(rng.standard_normal((8, 4)))
    anchors = np.arange(8)
    negatives = anchors[in_batch_negative_indices(8) % 8]
    bank = NoiseBank(rng.standard_normal((4, 4)))
    previous = None
    for phi in np.linspace(-1.0, 1.0, 21):
        alpha = compute_weights(ComplementaryScorer.from_reference(space, phi), anchors, negatives, bank).alpha
        assert set(np.unique(alpha)) <= {0.0, 1.0}
        if previous is not None:
            assert np.all(alpha >= previous)
        previous = alpha


def test_phi_extremes(rng):
    space = EmbeddingMatrix(rng.standard_normal((8, 4)))
    anchors = np.arange(8)
    negatives = anchors[in_batch_negative_indices(8) % 8]
    bank = NoiseBank(rng.standard_normal((2, 4)))
    off = compute_weights(ComplementaryScorer.from_reference(space, PHI_OFF), anchors, negatives, bank)
    assert np.all(off.alpha == 1.0)
    everything = compute_weights(ComplementaryScorer.from_reference(space, -1.0), anchors, negatives, bank)
    assert np.all(everything.alpha == 0.0)
    assert everything.masked_fraction == 1.0


def test_duplicate_sentence_is_masked():
    space = EmbeddingMatrix(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    scorer = ComplementaryScorer.from_reference(space, 0.9)
    mask = compute_weights(scorer, [0], np.array([[1, 2]]))
    assert_array_equal(mask.alpha, [[0.0, 1.0]])


def test_reference_dimension_must_match_working_space(rng):
    with pytest.raises(ShapeError):
        ComplementaryScorer.from_reference(EmbeddingMatrix(rng.standard_normal((4, 6))), 0.9, working_dim=8)


def test_self_scorer_only_holds_its_batch(rng):
    scorer = ComplementaryScorer.from_representations(rng.standard_normal((3, 4)), [10, 20, 30], 0.9)
    assert scorer.rows([20]).shape == (1, 4)
    with pytest.raises(IndexError):
        scorer.rows([11])


def test_weight_mask_rejects_soft_weights():
    with pytest.raises(ConfigurationError):
        WeightMask(np.array([[0.5, 1.0]]), num_in_batch=1)
