from typing import Dict, Tuple

import numpy as np

from src.errors import ShapeError
from src.models.checkpoint import AdamState
from src.models.head import PARAM_NAMES, HeadParams


def adam_step(
    params: HeadParams, grads: Dict[str, np.ndarray], state: AdamState, lr: float
) -> Tuple[HeadParams, AdamState]:
    """
    One bias-corrected Adam update; returns new parameters and state and
    leaves the inputs untouched
    """
    arrays = params.arrays()
    for name in PARAM_NAMES:
        if grads[name].shape != arrays[name].shape:
            raise ShapeError(f"gradient for {name} has shape {grads[name].shape}, expected {arrays[name].shape}")
        if state.m[name].shape != arrays[name].shape:
            raise ShapeError(f"optimizer moment for {name} has shape {state.m[name].shape}")

    step = state.step + 1
    bc1 = 1.0 - state.beta1 ** step
    bc2 = 1.0 - state.beta2 ** step

    new_arrays, m, v = {}, {}, {}
    for name in PARAM_NAMES:
        g = np.asarray(grads[name], dtype=np.float64)
        m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = m[name] / bc1
        v_hat = v[name] / bc2
        new_arrays[name] = arrays[name] - lr * m_hat / (np.sqrt(v_hat) + state.eps)

    new_state = AdamState(m=m, v=v, step=step, beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    return params.replace(new_arrays), new_state
