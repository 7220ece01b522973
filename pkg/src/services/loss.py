"""Debiased contrastive objective over two dropout views.

Row i of `anchors` and `positives` are the two views of sentence i. The
in-batch negatives of anchor i are the views of every other sentence in the
batch, so gradients reach a view through all the roles it plays. The noise
bank and the weight mask are constants.
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from src.errors import ConfigurationError, ShapeError
from src.services.noise import NoiseBank
from src.services.similarity import (
    pairwise_cosine,
    pairwise_cosine_backward,
    weighted_logsumexp,
)
from src.services.weighting import WeightMask

# denominator guard for the literal (positive-free) form
LITERAL_EPS = 1e-12


def in_batch_negative_indices(batch_size: int, single_view: bool = False) -> np.ndarray:
    """
    Row i lists, in the stacked views [anchors; positives], the views of
    every sentence except i: both views by default, only the positive view
    with `single_view`
    """
    others = np.array(
        [[j for j in range(batch_size) if j != i] for i in range(batch_size)], dtype=np.int64
    ).reshape(batch_size, batch_size - 1)
    if single_view:
        return others + batch_size
    return np.concatenate([others, others + batch_size], axis=1)


def in_batch_negatives(views: np.ndarray, i: int, single_view: bool = False) -> np.ndarray:
    views = np.asarray(views, dtype=np.float64)
    if views.ndim != 2 or views.shape[0] % 2:
        raise ShapeError(f"expected 2B stacked views, got shape {views.shape}")
    batch_size = views.shape[0] // 2
    if not 0 <= i < batch_size:
        raise IndexError(f"anchor index {i} out of range for batch size {batch_size}")
    return views[in_batch_negative_indices(batch_size, single_view)[i]]


@dataclass(frozen=True)
class LossBatch:
    anchors: np.ndarray
    positives: np.ndarray
    weights: WeightMask
    tau: float
    bank: Optional[NoiseBank] = None
    single_view: bool = False
    literal: bool = False

    def __post_init__(self):
        anchors = np.asarray(self.anchors, dtype=np.float64)
        positives = np.asarray(self.positives, dtype=np.float64)
        if anchors.ndim != 2 or anchors.shape != positives.shape:
            raise ShapeError(f"anchors {anchors.shape} and positives {positives.shape} differ")
        if not self.tau > 0:
            raise ConfigurationError(f"temperature must be positive, got {self.tau}")
        batch_size = anchors.shape[0]
        q = (batch_size - 1) * (1 if self.single_view else 2)
        m = 0 if self.bank is None else self.bank.m
        if self.bank is not None and self.bank.d != anchors.shape[1]:
            raise ShapeError(f"noise bank d={self.bank.d} does not match d={anchors.shape[1]}")
        if self.weights.alpha.shape != (batch_size, q + m) or self.weights.num_in_batch != q:
            raise ShapeError(
                f"weight mask {self.weights.alpha.shape} (in-batch {self.weights.num_in_batch}) "
                f"does not match {batch_size} anchors x ({q} in-batch + {m} noise) negatives"
            )
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "positives", positives)

    @property
    def batch_size(self) -> int:
        return self.anchors.shape[0]


@dataclass
class _Forward:
    loss: float
    views: np.ndarray
    negative_index: np.ndarray
    logits: np.ndarray
    lse: np.ndarray


def _forward(batch: LossBatch) -> _Forward:
    B = batch.batch_size
    views = np.vstack([batch.anchors, batch.positives])
    negative_index = in_batch_negative_indices(B, batch.single_view)

    anchor_view = pairwise_cosine(batch.anchors, views)
    positive = anchor_view[np.arange(B), B + np.arange(B)]
    columns = [positive[:, None], np.take_along_axis(anchor_view, negative_index, axis=1)]
    if batch.bank is not None:
        columns.append(pairwise_cosine(batch.anchors, batch.bank.vectors))
    logits = np.concatenate(columns, axis=1) / batch.tau

    alpha = batch.weights.alpha
    if batch.literal:
        lse = np.logaddexp(weighted_logsumexp(logits[:, 1:], alpha), np.log(LITERAL_EPS))
    else:
        weights = np.concatenate([np.ones((B, 1)), alpha], axis=1)
        lse = weighted_logsumexp(logits, weights)
    loss = float(np.mean(lse - logits[:, 0]))
    return _Forward(loss, views, negative_index, logits, lse)


def loss_forward(batch: LossBatch) -> float:
    """
    mean_i -log( e^{s_i+} / (e^{s_i+} + sum_neg alpha e^{s_neg}) ), s = cos/tau;
    the literal form drops e^{s_i+} from the denominator
    """
    return _forward(batch).loss


def loss_and_grad(batch: LossBatch) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Loss value plus its exact gradients with respect to anchors and positives
    """
    fwd = _forward(batch)
    B = batch.batch_size
    q = fwd.negative_index.shape[1]
    alpha = batch.weights.alpha

    negatives = np.where(alpha > 0, np.exp(fwd.logits[:, 1:] - fwd.lse[:, None]), 0.0)
    if batch.literal:
        d_positive = -np.ones(B)
    else:
        d_positive = np.exp(fwd.logits[:, 0] - fwd.lse) - 1.0
    scale = 1.0 / (batch.tau * B)

    grad_views = np.zeros((B, 2 * B))
    rows = np.arange(B)
    grad_views[rows[:, None], fwd.negative_index] = negatives[:, :q] * scale
    grad_views[rows, B + rows] = d_positive * scale
    d_anchor, d_views = pairwise_cosine_backward(batch.anchors, fwd.views, grad_views)
    d_anchor = d_anchor + d_views[:B]
    d_positive_view = d_views[B:]

    if batch.bank is not None:
        d_noise_anchor, _ = pairwise_cosine_backward(
            batch.anchors, batch.bank.vectors, negatives[:, q:] * scale
        )
        d_anchor = d_anchor + d_noise_anchor
    return fwd.loss, d_anchor, d_positive_view


def loss_backward(batch: LossBatch) -> Tuple[np.ndarray, np.ndarray]:
    _, d_anchor, d_positive = loss_and_grad(batch)
    return d_anchor, d_positive
