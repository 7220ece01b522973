from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from src.errors import ConfigurationError, ShapeError
from src.schemas.config import HeadConfig, HeadShape

PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclass(frozen=True)
class HeadParams:
    """
    Two-layer projection head h = act(x W1 + b1) W2 + b2 with dropout on the
    input and on the hidden activations.

    `version` increases with every optimizer update; forward caches remember
    the version they were built with.
    """

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    activation: str = "tanh"
    dropout: float = 0.1
    version: int = 0

    def __post_init__(self):
        d_in, d_hidden = self.W1.shape
        if self.b1.shape != (d_hidden,):
            raise ShapeError(f"b1 shape {self.b1.shape} does not match W1 {self.W1.shape}")
        if self.W2.ndim != 2 or self.W2.shape[0] != d_hidden:
            raise ShapeError(f"W2 shape {self.W2.shape} does not follow W1 {self.W1.shape}")
        if self.b2.shape != (self.W2.shape[1],):
            raise ShapeError(f"b2 shape {self.b2.shape} does not match W2 {self.W2.shape}")
        if self.W2.shape[1] < 2:
            raise ConfigurationError("head output dimension must be at least 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.activation not in ("tanh", "identity"):
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ConfigurationError(f"head parameter {name} holds non-finite values")

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, cfg: HeadConfig) -> "HeadParams":
        """
        Start near the identity map so training refines the input geometry
        instead of replacing it
        """
        d_hidden = cfg.hidden_dim or d_in
        d_out = cfg.out_dim or d_in
        W1 = np.eye(d_in, d_hidden) + cfg.init_scale * rng.standard_normal((d_in, d_hidden))
        W2 = np.eye(d_hidden, d_out) + cfg.init_scale * rng.standard_normal((d_hidden, d_out))
        return cls(
            W1=W1,
            b1=np.zeros(d_hidden),
            W2=W2,
            b2=np.zeros(d_out),
            activation=cfg.activation,
            dropout=cfg.dropout,
        )

    @classmethod
    def identity(cls, d: int, dropout: float = 0.0) -> "HeadParams":
        return cls(
            W1=np.eye(d),
            b1=np.zeros(d),
            W2=np.eye(d),
            b2=np.zeros(d),
            activation="identity",
            dropout=dropout,
        )

    @property
    def d_in(self) -> int:
        return self.W1.shape[0]

    @property
    def d_hidden(self) -> int:
        return self.W1.shape[1]

    @property
    def d_out(self) -> int:
        return self.W2.shape[1]

    @property
    def shape(self) -> HeadShape:
        return HeadShape(
            d_in=self.d_in,
            d_hidden=self.d_hidden,
            d_out=self.d_out,
            activation=self.activation,
            dropout=self.dropout,
        )

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def replace(self, arrays: Dict[str, np.ndarray], bump: bool = True) -> "HeadParams":
        return HeadParams(
            **{name: np.asarray(arrays[name], dtype=np.float64) for name in PARAM_NAMES},
            activation=self.activation,
            dropout=self.dropout,
            version=self.version + 1 if bump else self.version,
        )


@dataclass
class ViewCache:
    """Intermediate values of one forward pass, kept for backprop."""

    x_dropped: np.ndarray
    hidden: np.ndarray
    hidden_mask: np.ndarray


@dataclass
class ForwardCache:
    """Both dropout views of one batch, tied to the parameter version that produced them."""

    params_version: int
    views: Tuple[ViewCache, ViewCache]
