"""Representation diagnostics and the Spearman evaluation harness."""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats
from scipy.spatial.distance import pdist

from src import config
from src.errors import ConfigurationError, ShapeError, SimilarityDomainError, SpearmanUndefinedError
from src.models.embeddings import EmbeddingMatrix, PairDataset
from src.models.head import HeadParams
from src.services.head import encode
from src.services.similarity import logsumexp, normalize_rows, pairwise_cosine

logger = logging.getLogger(__name__)

HIGH_SIMILARITY = 0.7
DEFAULT_SAMPLE_PAIRS = 100_000


def uniformity_loss(
    reps: np.ndarray,
    sample_pairs: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    normalize: bool = True,
    exact_limit: Optional[int] = None,
) -> float:
    """
    log E[exp(-2 |x - y|^2)] over distinct pairs; exact up to `exact_limit`
    points, seeded Monte Carlo over `sample_pairs` pairs beyond
    """
    X = np.asarray(reps, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise SimilarityDomainError("uniformity needs at least two representations")
    if normalize:
        X = normalize_rows(X)
    n = X.shape[0]
    limit = config.EXACT_UNIFORMITY_LIMIT if exact_limit is None else exact_limit

    if n <= limit:
        sq_dist = pdist(X, "sqeuclidean")
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        count = sample_pairs or DEFAULT_SAMPLE_PAIRS
        first = rng.integers(0, n, size=count)
        second = rng.integers(0, n - 1, size=count)
        second = second + (second >= first)
        sq_dist = np.sum((X[first] - X[second]) ** 2, axis=1)
    return float(logsumexp(-2.0 * sq_dist) - np.log(len(sq_dist)))


def alignment_loss(anchors: np.ndarray, positives: np.ndarray, normalize: bool = True) -> float:
    """Mean squared distance between row-aligned (normalized) pairs."""
    A = np.asarray(anchors, dtype=np.float64)
    P = np.asarray(positives, dtype=np.float64)
    if A.shape != P.shape or A.ndim != 2:
        raise ShapeError(f"anchors {A.shape} and positives {P.shape} are not row-aligned")
    if normalize:
        A = normalize_rows(A)
        P = normalize_rows(P)
    return float(np.mean(np.sum((A - P) ** 2, axis=1)))


@dataclass(frozen=True)
class NegativeHistogram:
    edges: np.ndarray
    counts: np.ndarray
    high_fraction: float
    mean_similarity: float
    threshold: float = HIGH_SIMILARITY

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"bin_low": self.edges[:-1], "bin_high": self.edges[1:], "count": self.counts}
        )


def _histogram(sims: np.ndarray, bins: int, threshold: float) -> NegativeHistogram:
    if bins < 2:
        raise ConfigurationError(f"need at least 2 bins, got {bins}")
    if sims.size == 0:
        raise SimilarityDomainError("no negatives to audit")
    sims = np.clip(sims, -1.0, 1.0)
    counts, edges = np.histogram(sims, bins=bins, range=(-1.0, 1.0))
    return NegativeHistogram(
        edges=edges,
        counts=counts,
        high_fraction=float(np.mean(sims >= threshold)),
        mean_similarity=float(np.mean(sims)),
        threshold=threshold,
    )


def negative_similarity_histogram(
    anchor: np.ndarray, negatives: np.ndarray, bins: int = 20, threshold: float = HIGH_SIMILARITY
) -> NegativeHistogram:
    """
    Cosine histogram of one anchor against its negatives over [-1, 1], plus
    the share of negatives at or above `threshold`
    """
    negatives = np.asarray(negatives, dtype=np.float64)
    if negatives.ndim != 2 or negatives.shape[0] == 0:
        raise SimilarityDomainError("no negatives to audit")
    sims = pairwise_cosine(np.asarray(anchor, dtype=np.float64)[None, :], negatives)[0]
    return _histogram(sims, bins, threshold)


def audit_negatives(
    reps: np.ndarray,
    rng: np.random.Generator,
    batch_size: int = 256,
    num_batches: int = 8,
    bins: int = 20,
    threshold: float = HIGH_SIMILARITY,
) -> NegativeHistogram:
    """
    Pool the in-batch negative similarities of every anchor over random
    batches (255 negatives per anchor at the default batch size)
    """
    X = np.asarray(reps, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise SimilarityDomainError("the audit needs at least two sentences")
    if batch_size < 2 or num_batches < 1:
        raise ConfigurationError(
            f"the audit needs batch_size >= 2 and num_batches >= 1, got {batch_size} and {num_batches}"
        )
    size = min(batch_size, n)
    off_diagonal = ~np.eye(size, dtype=bool)
    pooled = []
    for _ in range(num_batches):
        batch = rng.choice(n, size=size, replace=False)
        sims = pairwise_cosine(X[batch], X[batch])
        pooled.append(sims[off_diagonal])
    return _histogram(np.concatenate(pooled), bins, threshold)


def spearman(pred: Sequence[float], gold: Sequence[float]) -> float:
    """
    Pearson correlation of average ranks; undefined (an error, not 0) for
    constant input
    """
    pred = np.asarray(pred, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.float64)
    if pred.ndim != 1 or pred.shape != gold.shape:
        raise ShapeError(f"prediction {pred.shape} and gold {gold.shape} lengths differ")
    if pred.size < 2:
        raise SpearmanUndefinedError("spearman needs at least two pairs")
    if np.ptp(pred) == 0 or np.ptp(gold) == 0:
        raise SpearmanUndefinedError("spearman is undefined for constant input")
    rho = stats.spearmanr(pred, gold)[0]
    return float(np.clip(rho, -1.0, 1.0))


def pair_cosines(reps: np.ndarray, index_a: np.ndarray, index_b: np.ndarray) -> np.ndarray:
    unit = normalize_rows(reps)
    return np.sum(unit[index_a] * unit[index_b], axis=1)


def evaluate_representations(reps: np.ndarray, dev: PairDataset) -> float:
    """Spearman of raw cosines; `reps` rows are corpus rows."""
    return spearman(pair_cosines(reps, dev.index_a, dev.index_b), dev.scores)


def _dev_rows(devs: Sequence[PairDataset]) -> np.ndarray:
    return np.unique(np.concatenate([np.concatenate([d.index_a, d.index_b]) for d in devs]))


def evaluate(params: HeadParams, corpus: EmbeddingMatrix, dev: PairDataset) -> float:
    """
    Encode with dropout off, predict the cosine of each pair, correlate with gold
    """
    if len(dev) == 0:
        raise SimilarityDomainError("evaluation needs a non-empty pair dataset")
    dev.validate_against(corpus)
    rows = _dev_rows([dev])
    reps = encode(params, corpus.rows(rows))
    pred = pair_cosines(reps, np.searchsorted(rows, dev.index_a), np.searchsorted(rows, dev.index_b))
    return spearman(pred, dev.scores)


def evaluate_many(
    params: HeadParams, corpus: EmbeddingMatrix, devs: Sequence[PairDataset]
) -> Tuple[float, List[float]]:
    """Mean Spearman over several dev sets, plus each one."""
    scores = [evaluate(params, corpus, dev) for dev in devs]
    return float(np.mean(scores)), scores


def dev_uniformity(
    params: HeadParams, corpus: EmbeddingMatrix, devs: Sequence[PairDataset]
) -> float:
    rows = _dev_rows(devs)
    return uniformity_loss(encode(params, corpus.rows(rows)), rng=np.random.default_rng(0))


def compute_whitening(reps: np.ndarray, dim: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Whitening kernel and bias: y = (x + bias) @ kernel has zero mean and
    identity covariance; `dim` keeps the leading components
    """
    X = np.asarray(reps, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise SimilarityDomainError("whitening needs at least two representations")
    if dim is not None and dim < 1:
        raise ConfigurationError(f"whitening dimension must be at least 1, got {dim}")
    mu = X.mean(axis=0, keepdims=True)
    cov = np.cov(X.T)
    u, s, _ = np.linalg.svd(cov)
    kernel = u @ np.diag(1.0 / np.sqrt(np.maximum(s, 1e-12)))
    if dim is not None:
        kernel = kernel[:, :dim]
    return kernel, -mu


def apply_whitening(reps: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return (np.asarray(reps, dtype=np.float64) + bias) @ kernel
