import logging
from typing import Dict, Optional, Tuple

import numpy as np

from src.errors import HeadCacheError, ShapeError
from src.models.head import PARAM_NAMES, ForwardCache, HeadParams, ViewCache

logger = logging.getLogger(__name__)


def dropout_mask(rng: np.random.Generator, shape: Tuple[int, ...], p: float) -> np.ndarray:
    """
    Inverted-dropout multiplier: 0 with probability p, 1/(1-p) otherwise
    """
    if p == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def _activate(params: HeadParams, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if params.activation == "tanh" else z


def _check_input(params: HeadParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.d_in:
        raise ShapeError(f"input shape {x.shape} does not match head input d={params.d_in}")
    return x


def _forward_view(
    params: HeadParams, x: np.ndarray, rng: Optional[np.random.Generator]
) -> Tuple[np.ndarray, ViewCache]:
    p = params.dropout if rng is not None else 0.0
    x_dropped = x * dropout_mask(rng, x.shape, p)
    hidden = _activate(params, x_dropped @ params.W1 + params.b1)
    hidden_mask = dropout_mask(rng, hidden.shape, p)
    h = (hidden * hidden_mask) @ params.W2 + params.b2
    return h, ViewCache(x_dropped=x_dropped, hidden=hidden, hidden_mask=hidden_mask)


def forward_views(
    params: HeadParams, x: np.ndarray, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray, ForwardCache]:
    """
    Two passes of the same batch under independent dropout masks; the pair
    (h, h_plus) is the positive pair of every sentence
    """
    x = _check_input(params, x)
    h, first = _forward_view(params, x, rng)
    h_plus, second = _forward_view(params, x, rng)
    return h, h_plus, ForwardCache(params_version=params.version, views=(first, second))


def encode(params: HeadParams, x: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    """Dropout-free representations."""
    x = _check_input(params, x)
    out = np.empty((x.shape[0], params.d_out))
    for start in range(0, x.shape[0], batch_size):
        out[start:start + batch_size], _ = _forward_view(params, x[start:start + batch_size], None)
    return out


def _backward_view(params: HeadParams, view: ViewCache, grad: np.ndarray) -> Dict[str, np.ndarray]:
    dropped = view.hidden * view.hidden_mask
    d_hidden = (grad @ params.W2.T) * view.hidden_mask
    if params.activation == "tanh":
        d_hidden = d_hidden * (1.0 - view.hidden ** 2)
    return {
        "W1": view.x_dropped.T @ d_hidden,
        "b1": d_hidden.sum(axis=0),
        "W2": dropped.T @ grad,
        "b2": grad.sum(axis=0),
    }


def head_backward(
    params: HeadParams,
    cache: Optional[ForwardCache],
    grad_h: np.ndarray,
    grad_h_plus: np.ndarray,
) -> Dict[str, np.ndarray]:
    """
    Parameter gradients of a loss whose gradients with respect to the two
    views are grad_h and grad_h_plus
    """
    if cache is None:
        raise HeadCacheError("head_backward needs the cache of a forward_views call")
    if cache.params_version != params.version:
        raise HeadCacheError(
            f"forward cache was built for parameter version {cache.params_version}, "
            f"head is at version {params.version}"
        )
    grads = []
    for view, grad in zip(cache.views, (grad_h, grad_h_plus)):
        grad = np.asarray(grad, dtype=np.float64)
        expected = (view.hidden.shape[0], params.d_out)
        if grad.shape != expected:
            raise ShapeError(f"upstream gradient {grad.shape} does not match view {expected}")
        grads.append(_backward_view(params, view, grad))
    return {name: grads[0][name] + grads[1][name] for name in PARAM_NAMES}
