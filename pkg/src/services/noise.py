"""Noise-based negatives: Gaussian initialization and normalized gradient
ascent on the batch-summed non-uniformity loss.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from src.errors import ConfigurationError, ShapeError
from src.schemas.config import NoiseConfig
from src.services.similarity import (
    logsumexp,
    pairwise_cosine,
    pairwise_cosine_backward,
)

logger = logging.getLogger(__name__)

# gradients below this norm leave their vector untouched for that step
MIN_GRAD_NORM = 1e-12


@dataclass(frozen=True)
class NoiseBank:
    """m x d noise negatives shared by every instance of one batch."""

    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float64, copy=True)
        if vectors.ndim != 2 or vectors.shape[0] < 1:
            raise ShapeError(f"noise bank must be a non-empty matrix, got shape {vectors.shape}")
        if not np.all(np.isfinite(vectors)):
            raise ConfigurationError("noise bank holds non-finite values")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)

    @property
    def m(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]


def init_noise(rng: np.random.Generator, m: int, d: int, sigma: float) -> NoiseBank:
    """
    Draw m i.i.d. N(0, sigma^2) vectors of dimension d
    """
    if m < 1:
        raise ConfigurationError(f"noise bank needs m >= 1, got {m} (use k=0 to disable noise)")
    if d < 2:
        raise ConfigurationError(f"noise dimension must be at least 2, got {d}")
    if not sigma > 0:
        raise ConfigurationError(f"sigma must be positive, got {sigma}")
    return NoiseBank(rng.normal(0.0, sigma, size=(m, d)))


def _check_batch(anchors: np.ndarray, positives: np.ndarray, bank: NoiseBank) -> None:
    if anchors.shape != positives.shape:
        raise ShapeError(f"anchors {anchors.shape} and positives {positives.shape} are not row-aligned")
    if anchors.shape[1] != bank.d:
        raise ShapeError(f"representations have d={anchors.shape[1]}, noise bank d={bank.d}")


def nonuniformity_loss(
    anchors: np.ndarray, positives: np.ndarray, bank: NoiseBank, tau_u: float
) -> float:
    """
    sum_i [ -sim(h_i, h_i+)/tau_u + logsumexp_j sim(h_i, noise_j)/tau_u ]
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    positives = np.asarray(positives, dtype=np.float64)
    _check_batch(anchors, positives, bank)
    positive_sims = np.diag(pairwise_cosine(anchors, positives))
    noise_scores = pairwise_cosine(anchors, bank.vectors) / tau_u
    per_instance = -positive_sims / tau_u + logsumexp(noise_scores, axis=1)
    return float(np.sum(per_instance))


def noise_gradient(
    anchors: np.ndarray, positives: np.ndarray, bank: NoiseBank, tau_u: float
) -> np.ndarray:
    """
    Gradient of nonuniformity_loss with respect to every noise vector; the
    representations are constants here
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    positives = np.asarray(positives, dtype=np.float64)
    _check_batch(anchors, positives, bank)
    scores = pairwise_cosine(anchors, bank.vectors) / tau_u
    softmax = np.exp(scores - logsumexp(scores, axis=1)[:, None])
    _, grad = pairwise_cosine_backward(anchors, bank.vectors, softmax / tau_u)
    return grad


def ascent_step(
    bank: NoiseBank, anchors: np.ndarray, positives: np.ndarray, cfg: NoiseConfig
) -> NoiseBank:
    grad = noise_gradient(anchors, positives, bank, cfg.tau_u)
    norms = np.linalg.norm(grad, axis=1)
    active = norms >= MIN_GRAD_NORM
    step = np.zeros_like(grad)
    step[active] = cfg.beta * grad[active] / norms[active, None]
    return NoiseBank(bank.vectors + step)


def optimize_noise(
    bank: NoiseBank,
    anchors: np.ndarray,
    positives: np.ndarray,
    cfg: NoiseConfig,
    trace: Optional[List[float]] = None,
) -> NoiseBank:
    """
    t_steps updates noise_j <- noise_j + beta * g_j / |g_j|.

    When `trace` is given it receives the loss before the first step and
    after every step.
    """
    if trace is not None:
        trace.append(nonuniformity_loss(anchors, positives, bank, cfg.tau_u))
    if cfg.beta == 0 or cfg.t_steps == 0:
        return bank

    for step in range(cfg.t_steps):
        bank = ascent_step(bank, anchors, positives, cfg)
        if trace is not None or logger.isEnabledFor(logging.DEBUG):
            loss = nonuniformity_loss(anchors, positives, bank, cfg.tau_u)
            logger.debug("noise ascent step %d/%d: L_U=%.6f", step + 1, cfg.t_steps, loss)
            if trace is not None:
                trace.append(loss)
    return bank
