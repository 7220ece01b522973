"""Cosine similarity, log-sum-exp and their gradients.

Every kernel accumulates in float64. Zero-norm vectors raise instead of being
patched with an epsilon, so gradient checks never see a silently biased value.
"""
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import ShapeError, SimilarityDomainError

ArrayLike = Union[np.ndarray, Sequence[float]]


def _as_vector(x: ArrayLike) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected a vector, got shape {v.shape}")
    return v


def _as_matrix(x: ArrayLike) -> np.ndarray:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {m.shape}")
    return m


def _norm(v: np.ndarray) -> float:
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise SimilarityDomainError("cosine similarity is undefined for a zero-norm vector")
    return norm


def row_norms(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0.0):
        row = int(np.flatnonzero(norms == 0.0)[0])
        raise SimilarityDomainError(f"row {row} has zero norm")
    return norms


def normalize_rows(X: ArrayLike) -> np.ndarray:
    M = _as_matrix(X)
    return M / row_norms(M)[:, None]


def cosine_sim(a: ArrayLike, b: ArrayLike) -> float:
    a = _as_vector(a)
    b = _as_vector(b)
    if a.shape != b.shape:
        raise ShapeError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(np.dot(a, b) / (_norm(a) * _norm(b)))


def cosine_sim_grad_b(a: ArrayLike, b: ArrayLike) -> np.ndarray:
    """
    d cos(a, b) / d b = (a/|a| - cos(a, b) * b/|b|) / |b|
    """
    a = _as_vector(a)
    b = _as_vector(b)
    if a.shape != b.shape:
        raise ShapeError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    norm_a = _norm(a)
    norm_b = _norm(b)
    a_hat = a / norm_a
    b_hat = b / norm_b
    cos = float(np.dot(a_hat, b_hat))
    return (a_hat - cos * b_hat) / norm_b


def logsumexp(scores: ArrayLike, axis: Optional[int] = None) -> Union[float, np.ndarray]:
    """
    log(sum(exp(scores))) shifted by the maximum, so +-1/tau scale inputs never overflow
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise SimilarityDomainError("logsumexp of an empty set")
    if not np.all(np.isfinite(s)):
        raise SimilarityDomainError("logsumexp requires finite scores")
    top = np.max(s, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(s - top), axis=axis, keepdims=True)) + top
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def weighted_logsumexp(scores: np.ndarray, weights: np.ndarray, axis: int = -1) -> np.ndarray:
    """
    log(sum(w * exp(s))) for 0/1 weights.

    Entries with weight 0 are replaced by -inf before the shift is chosen, so
    their values cannot influence the result, not even in the last bit. A
    slice with no surviving entry yields -inf.
    """
    s = np.asarray(scores, dtype=np.float64)
    w = np.asarray(weights)
    if s.shape != w.shape:
        raise ShapeError(f"scores {s.shape} and weights {w.shape} differ")
    keep = w > 0
    if np.any(np.isnan(s[keep])):
        raise SimilarityDomainError("weighted logsumexp requires finite surviving scores")
    masked = np.where(keep, s, -np.inf)
    top = np.max(masked, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(top), top, 0.0)
    total = np.sum(np.exp(masked - shift), axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        out = np.log(total) + shift
    return np.squeeze(out, axis=axis)


def pairwise_cosine(A: ArrayLike, B: ArrayLike) -> np.ndarray:
    """
    Entry (i, j) is cosine_sim(A[i], B[j])
    """
    A = _as_matrix(A)
    B = _as_matrix(B)
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return normalize_rows(A) @ normalize_rows(B).T


def pairwise_cosine_backward(
    A: ArrayLike, B: ArrayLike, grad: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vector-Jacobian product of pairwise_cosine for an upstream gradient of
    shape (len(A), len(B)); returns (dA, dB)
    """
    A = _as_matrix(A)
    B = _as_matrix(B)
    G = np.asarray(grad, dtype=np.float64)
    if G.shape != (A.shape[0], B.shape[0]):
        raise ShapeError(f"upstream gradient {G.shape} does not match ({A.shape[0]}, {B.shape[0]})")
    norm_a = row_norms(A)
    norm_b = row_norms(B)
    A_hat = A / norm_a[:, None]
    B_hat = B / norm_b[:, None]
    C = A_hat @ B_hat.T
    GC = G * C
    dA = (G @ B_hat - GC.sum(axis=1)[:, None] * A_hat) / norm_a[:, None]
    dB = (G.T @ A_hat - GC.sum(axis=0)[:, None] * B_hat) / norm_b[:, None]
    return dA, dB
