from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from src.models.head import PARAM_NAMES, HeadParams
from src.schemas.config import TrainConfig


@dataclass(frozen=True)
class AdamState:
    """First/second moments per head parameter plus the step counter."""

    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(
        cls, params: HeadParams, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
    ) -> "AdamState":
        arrays = params.arrays()
        return cls(
            m={name: np.zeros_like(arrays[name]) for name in PARAM_NAMES},
            v={name: np.zeros_like(arrays[name]) for name in PARAM_NAMES},
            step=0,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )

    @classmethod
    def for_config(cls, params: HeadParams, cfg: TrainConfig) -> "AdamState":
        return cls.zeros_like(params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)


@dataclass(frozen=True)
class Checkpoint:
    params: HeadParams
    optimizer: AdamState
    step: int
    config: TrainConfig
    dev_metric: Optional[float] = None
