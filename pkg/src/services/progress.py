from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

from src.errors import DclrError

METRIC_COLUMNS = ["step", "train_loss", "uniformity", "masked_fraction", "dev_spearman", "alignment"]
FLOAT_FORMAT = "%.10g"


@dataclass
class MetricSeries:
    """Ordered (step, value) pairs of one metric."""

    name: str
    steps: List[int] = field(default_factory=list)
    values: List[float] = field(default_factory=list)

    def append(self, step: int, value: float) -> None:
        if self.steps and step <= self.steps[-1]:
            raise ValueError(f"{self.name}: step {step} does not follow step {self.steps[-1]}")
        if not np.isfinite(value):
            raise ValueError(f"{self.name}: non-finite value at step {step}")
        self.steps.append(int(step))
        self.values.append(float(value))

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def last(self) -> Optional[float]:
        return self.values[-1] if self.values else None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"step": self.steps, self.name: self.values})


def write_tsv(frame: pd.DataFrame, path: Union[str, Path]) -> None:
    """TSV with fixed float formatting so identical runs give identical bytes."""
    path = Path(path)
    try:
        frame.to_csv(path, sep="\t", index=False, float_format=FLOAT_FORMAT, na_rep="")
    except OSError as e:
        raise DclrError(f"Error writing {path}: {e}") from e


class TrainingProgress:
    """
    Per-step training metrics and periodic dev evaluations of one run
    """

    def __init__(self):
        self.rows: List[Dict[str, float]] = []
        self.series: Dict[str, MetricSeries] = {
            name: MetricSeries(name)
            for name in ("train_loss", "uniformity", "masked_fraction", "alignment",
                         "dev_spearman", "dev_uniformity")
        }

    def record_step(
        self,
        step: int,
        loss: float,
        uniformity: float,
        masked_fraction: float,
        alignment: float,
    ) -> None:
        self.rows.append({
            "step": step,
            "train_loss": loss,
            "uniformity": uniformity,
            "masked_fraction": masked_fraction,
            "dev_spearman": np.nan,
            "alignment": alignment,
        })
        self.series["train_loss"].append(step, loss)
        self.series["uniformity"].append(step, uniformity)
        self.series["masked_fraction"].append(step, masked_fraction)
        self.series["alignment"].append(step, alignment)

    def record_eval(self, step: int, dev_spearman: float, dev_uniformity: float) -> None:
        """
        Attach a dev evaluation to the row of `step` (recorded first)
        """
        if not self.rows or self.rows[-1]["step"] != step:
            raise ValueError(f"no training row recorded for step {step}")
        self.rows[-1]["dev_spearman"] = dev_spearman
        self.series["dev_spearman"].append(step, dev_spearman)
        self.series["dev_uniformity"].append(step, dev_uniformity)

    def metrics_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.rows, columns=METRIC_COLUMNS)
        return frame.astype({"step": "int64"})

    def uniformity_frame(self) -> pd.DataFrame:
        series = self.series["dev_uniformity"]
        return pd.DataFrame({"step": series.steps, "dev_uniformity": series.values})

    def write_metrics(self, path: Union[str, Path]) -> None:
        write_tsv(self.metrics_frame(), path)
