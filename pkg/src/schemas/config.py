import math
from typing import Any, Dict, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.config import PHI_OFF

WeightingMode = Literal["reference", "self", "off"]
Activation = Literal["tanh", "identity"]

# ablation variants expressed as TrainConfig overrides
ABLATION_VARIANTS: Dict[str, Dict[str, Any]] = {
    "dclr": {},
    "no_noise": {"no_noise": True},
    "no_weighting": {"weighting": "off"},
    "no_both": {"no_noise": True, "weighting": "off"},
    "random_noise": {"no_noise_update": True},
    "self_weighting": {"weighting": "self"},
}


class NoiseConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    k: float = Field(1.0, ge=0, allow_inf_nan=False)
    sigma: float = Field(1.0, gt=0, allow_inf_nan=False)
    beta: float = Field(1e-3, ge=0, allow_inf_nan=False)
    t_steps: int = Field(4, ge=0)
    tau_u: float = Field(0.05, gt=0, allow_inf_nan=False)

    def bank_size(self, batch_size: int) -> int:
        """m = round(k * batch_size), half rounded up; never empty while k > 0"""
        if self.k == 0:
            return 0
        return max(1, int(math.floor(self.k * batch_size + 0.5)))


class HeadConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    hidden_dim: Optional[int] = Field(None, ge=1)
    out_dim: Optional[int] = Field(None, ge=2)
    activation: Activation = "tanh"
    dropout: float = Field(0.1, ge=0, lt=1)
    init_scale: float = Field(0.02, ge=0, allow_inf_nan=False)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    # contrastive objective
    tau: float = Field(0.05, gt=0, allow_inf_nan=False)
    literal_eq6: bool = False
    single_view_negatives: bool = False

    # noise-based negatives
    tau_u: float = Field(0.05, gt=0, allow_inf_nan=False)
    sigma: float = Field(1.0, gt=0, allow_inf_nan=False)
    beta: float = Field(1e-3, ge=0, allow_inf_nan=False)
    t_steps: int = Field(4, ge=0)
    k: float = Field(1.0, ge=0, allow_inf_nan=False)
    no_noise: bool = False
    no_noise_update: bool = False

    # instance weighting
    phi: float = Field(0.9, allow_inf_nan=False)
    weighting: WeightingMode = "self"

    # head
    dropout: float = Field(0.1, ge=0, lt=1)
    hidden_dim: Optional[int] = Field(None, ge=1)
    out_dim: Optional[int] = Field(None, ge=2)
    activation: Activation = "tanh"
    init_scale: float = Field(0.02, ge=0, allow_inf_nan=False)

    # optimization
    lr: float = Field(1e-3, gt=0, allow_inf_nan=False)
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    batch_size: int = Field(16, ge=1)
    epochs: int = Field(3, ge=1)
    eval_every: int = Field(150, ge=1)
    seed: int = Field(42, ge=0)
    data_fraction: float = Field(1.0, gt=0, le=1)

    @model_validator(mode="after")
    def _check_phi(self) -> "TrainConfig":
        if not -1.0 <= self.phi <= PHI_OFF:
            raise ValueError(f"phi must lie in [-1, 1] (or be 'off'), got {self.phi}")
        return self

    @property
    def noise(self) -> NoiseConfig:
        return NoiseConfig(
            k=self.k,
            sigma=self.sigma,
            beta=self.beta,
            t_steps=self.t_steps,
            tau_u=self.tau_u,
        )

    @property
    def head(self) -> HeadConfig:
        return HeadConfig(
            hidden_dim=self.hidden_dim,
            out_dim=self.out_dim,
            activation=self.activation,
            dropout=self.dropout,
            init_scale=self.init_scale,
        )

    @property
    def uses_noise(self) -> bool:
        return not self.no_noise and self.k > 0

    def with_overrides(self, **overrides: Any) -> "TrainConfig":
        """
        Copy with fields replaced, re-running validation
        """
        return TrainConfig(**{**self.model_dump(), **overrides})

    def for_variant(self, variant: str) -> "TrainConfig":
        if variant not in ABLATION_VARIANTS:
            raise ValueError(
                f"unknown variant {variant!r}; expected one of {sorted(ABLATION_VARIANTS)}"
            )
        return self.with_overrides(**ABLATION_VARIANTS[variant])


class HeadShape(BaseModel):
    model_config = ConfigDict(extra="forbid")

    d_in: int = Field(ge=2)
    d_hidden: int = Field(ge=1)
    d_out: int = Field(ge=2)
    activation: Activation
    dropout: float = Field(ge=0, lt=1)


class AdamMetadata(BaseModel):
    model_config = ConfigDict(extra="forbid")

    step: int = Field(ge=0)
    beta1: float
    beta2: float
    eps: float


class CheckpointMetadata(BaseModel):
    model_config = ConfigDict(extra="forbid")

    version: str
    step: int = Field(ge=0)
    dev_metric: Optional[float] = None
    config: TrainConfig
    head: HeadShape
    head_version: int = Field(0, ge=0)
    optimizer: AdamMetadata


class SynthConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n: int = Field(2000, ge=2)
    d: int = Field(64, ge=2)
    cone_angle: float = Field(20.0, gt=0, le=90)
    clusters: int = Field(20, ge=1)
    noise_level: float = Field(1.0, ge=0, allow_inf_nan=False)
    jitter: float = Field(0.0, ge=0, allow_inf_nan=False)
    num_pairs: int = Field(1000, ge=1)
    seed: int = Field(0, ge=0)


class AuditConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    batch_size: int = Field(256, ge=2)
    num_batches: int = Field(8, ge=1)
    bins: int = Field(20, ge=2)
    threshold: float = Field(0.7, ge=-1, le=1)
    whiten: bool = False


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    whiten: bool = False
    whiten_dim: Optional[int] = Field(None, ge=1)


class SelfCheckConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    scale: float = Field(1.0, gt=0, allow_inf_nan=False)
