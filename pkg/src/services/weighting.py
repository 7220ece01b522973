"""Instance weighting: a complementary scorer zeroes every negative whose
similarity to the anchor sentence reaches the threshold phi.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from src.errors import ConfigurationError, ShapeError
from src.models.embeddings import EmbeddingMatrix
from src.services.noise import NoiseBank
from src.services.similarity import cosine_sim, normalize_rows, pairwise_cosine

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WeightMask:
    """
    0/1 weights per (anchor, negative); the first `num_in_batch` columns are
    in-batch negatives, the rest are noise negatives
    """

    alpha: np.ndarray
    num_in_batch: int

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64)
        if alpha.ndim != 2:
            raise ShapeError(f"weight mask must be 2-d, got shape {alpha.shape}")
        if not np.all((alpha == 0.0) | (alpha == 1.0)):
            raise ConfigurationError("instance weights must be exactly 0 or 1")
        if not 0 <= self.num_in_batch <= alpha.shape[1]:
            raise ShapeError(f"num_in_batch={self.num_in_batch} exceeds {alpha.shape[1]} columns")
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)

    @property
    def num_noise(self) -> int:
        return self.alpha.shape[1] - self.num_in_batch

    @property
    def masked_fraction(self) -> float:
        if self.alpha.size == 0:
            return 0.0
        return float(np.mean(self.alpha == 0.0))

    @classmethod
    def ones(cls, batch_size: int, num_in_batch: int, num_noise: int = 0) -> "WeightMask":
        return cls(np.ones((batch_size, num_in_batch + num_noise)), num_in_batch)


def gate(similarities: np.ndarray, phi: float) -> np.ndarray:
    """
    alpha = 0 where sim >= phi (boundary included), 1 otherwise
    """
    sims = np.asarray(similarities, dtype=np.float64)
    return np.where(sims >= phi, 0.0, 1.0)


@dataclass(frozen=True)
class ComplementaryScorer:
    """
    Similarity space used to detect false negatives.

    `space` rows belong to corpus indices: row r of a reference scorer is
    corpus row r; a self scorer holds only the rows listed in `indices`.
    """

    space: np.ndarray
    phi: float
    mode: str = "reference"
    indices: Optional[Dict[int, int]] = None

    def __post_init__(self):
        if self.mode not in ("reference", "self"):
            raise ConfigurationError(f"unknown scorer mode {self.mode!r}")
        if not np.isfinite(self.phi):
            raise ConfigurationError("phi must be finite")
        space = np.array(self.space, dtype=np.float64, copy=True)
        if space.ndim != 2:
            raise ShapeError(f"scorer space must be a matrix, got shape {space.shape}")
        space.setflags(write=False)
        object.__setattr__(self, "space", space)

    @classmethod
    def from_reference(
        cls, reference: EmbeddingMatrix, phi: float, working_dim: Optional[int] = None
    ) -> "ComplementaryScorer":
        if working_dim is not None and reference.d != working_dim:
            raise ShapeError(
                f"reference embeddings have d={reference.d}, working representations d={working_dim}"
            )
        return cls(space=reference.as_float64(), phi=phi, mode="reference")

    @classmethod
    def from_representations(
        cls, representations: np.ndarray, corpus_indices: Sequence[int], phi: float
    ) -> "ComplementaryScorer":
        """Self weighting: the current model's frozen outputs for a batch."""
        index = {int(c): r for r, c in enumerate(corpus_indices)}
        return cls(space=representations, phi=phi, mode="self", indices=index)

    @property
    def d(self) -> int:
        return self.space.shape[1]

    def rows(self, corpus_indices: Sequence[int]) -> np.ndarray:
        idx = np.asarray(corpus_indices, dtype=np.int64)
        if self.indices is not None:
            try:
                idx = np.vectorize(self.indices.__getitem__, otypes=[np.int64])(idx)
            except KeyError as exc:
                raise IndexError(f"corpus index {exc.args[0]} is not held by this scorer") from None
        if idx.size and (idx.min() < 0 or idx.max() >= self.space.shape[0]):
            raise IndexError(f"corpus index out of range for {self.space.shape[0]} rows")
        return self.space[idx]

    def score_pair(self, i: int, j: int) -> float:
        a, b = self.rows([i, j])
        return cosine_sim(a, b)

    def score_noise(self, i: int, noise_vec: np.ndarray) -> float:
        noise_vec = np.asarray(noise_vec, dtype=np.float64)
        if noise_vec.shape != (self.d,):
            raise ShapeError(f"noise vector shape {noise_vec.shape} does not match scorer d={self.d}")
        return cosine_sim(self.rows([i])[0], noise_vec)


def compute_weights(
    scorer: ComplementaryScorer,
    anchor_indices: Sequence[int],
    negative_indices: np.ndarray,
    bank: Optional[NoiseBank] = None,
) -> WeightMask:
    """
    Gate every in-batch negative (given as corpus indices, one row per
    anchor) and every noise vector against each anchor sentence
    """
    anchor_indices = np.asarray(anchor_indices, dtype=np.int64)
    negative_indices = np.asarray(negative_indices, dtype=np.int64)
    batch_size = len(anchor_indices)
    if negative_indices.ndim != 2 or negative_indices.shape[0] != batch_size:
        raise ShapeError(
            f"negative index matrix {negative_indices.shape} does not have {batch_size} rows"
        )

    anchors = normalize_rows(scorer.rows(anchor_indices))
    columns = []
    if negative_indices.shape[1]:
        negatives = scorer.rows(negative_indices.ravel())
        negatives = normalize_rows(negatives).reshape(batch_size, negative_indices.shape[1], -1)
        columns.append(np.einsum("bd,bqd->bq", anchors, negatives))
    else:
        columns.append(np.zeros((batch_size, 0)))
    if bank is not None:
        if bank.d != scorer.d:
            raise ShapeError(f"noise bank d={bank.d} does not match scorer d={scorer.d}")
        columns.append(pairwise_cosine(anchors, bank.vectors))

    sims = np.concatenate(columns, axis=1)
    mask = WeightMask(gate(sims, scorer.phi), num_in_batch=negative_indices.shape[1])
    logger.debug("instance weighting masked %.3f of negatives", mask.masked_fraction)
    return mask
