import logging
from typing import Dict, List, Optional, Sequence

import pandas as pd

from src.models.embeddings import EmbeddingMatrix, PairDataset
from src.schemas.config import ABLATION_VARIANTS, TrainConfig
from src.services.trainer import TrainingResult, run_training
from src.services.weighting import ComplementaryScorer

logger = logging.getLogger(__name__)

SWEEP_PARAMS = ("phi", "k", "data_fraction")


class SweepService:
    """
    Grid and ablation runs sharing one corpus, dev sets and base config
    """

    def __init__(
        self,
        corpus: EmbeddingMatrix,
        devs: Sequence[PairDataset],
        base_cfg: TrainConfig,
        scorer: Optional[ComplementaryScorer] = None,
    ):
        self.corpus = corpus
        self.devs = list(devs)
        self.base_cfg = base_cfg
        self.scorer = scorer
        self.curves: List[Dict] = []

    def train_run(self, cfg: TrainConfig, label: str) -> TrainingResult:
        scorer = self.scorer if cfg.weighting == "reference" else None
        result = run_training(self.corpus, self.devs, cfg, scorer=scorer)
        series = result.progress.series["uniformity"]
        self.curves.extend(
            {"run": label, "seed": cfg.seed, "step": step, "uniformity": value}
            for step, value in zip(series.steps, series.values)
        )
        return result

    @staticmethod
    def _summary(result: TrainingResult) -> Dict[str, float]:
        return {
            "dev_spearman": result.best.dev_metric,
            "final_uniformity": result.progress.series["dev_uniformity"].last,
        }

    def run(self, param: str, values: Sequence[float]) -> pd.DataFrame:
        """
        One training run per grid value of `param`, all with the base seed
        """
        if param not in SWEEP_PARAMS:
            raise ValueError(f"cannot sweep {param!r}; expected one of {SWEEP_PARAMS}")
        rows = []
        for value in values:
            cfg = self.base_cfg.with_overrides(**{param: value})
            logger.info("sweep %s=%g", param, value)
            result = self.train_run(cfg, f"{param}={value:g}")
            rows.append({"value": float(value), **self._summary(result)})
        return pd.DataFrame(rows, columns=["value", "dev_spearman", "final_uniformity"])

    def run_ablations(self, variants: Sequence[str], seeds: Sequence[int]) -> pd.DataFrame:
        """
        Train every variant under every seed
        """
        unknown = [v for v in variants if v not in ABLATION_VARIANTS]
        if unknown:
            raise ValueError(f"unknown variants {unknown}; expected any of {sorted(ABLATION_VARIANTS)}")
        rows = []
        for variant in variants:
            for seed in seeds:
                cfg = self.base_cfg.for_variant(variant).with_overrides(seed=seed)
                logger.info("ablation %s seed=%d", variant, seed)
                result = self.train_run(cfg, variant)
                rows.append({"variant": variant, "seed": seed, **self._summary(result)})
        return pd.DataFrame(rows, columns=["variant", "seed", "dev_spearman", "final_uniformity"])

    @staticmethod
    def ablation_means(runs: pd.DataFrame) -> pd.DataFrame:
        """Per-variant means, in first-seen variant order."""
        return (
            runs.groupby("variant", sort=False)[["dev_spearman", "final_uniformity"]]
            .mean()
            .reset_index()
        )

    def curves_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.curves, columns=["run", "seed", "step", "uniformity"])
