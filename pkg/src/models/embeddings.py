from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from src.errors import EmbeddingValidationError, PairValidationError

GOLD_MIN = 0.0
GOLD_MAX = 5.0


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class EmbeddingMatrix:
    """
    n x d sentence representations stored as 32-bit floats, with optional ids
    """

    data: np.ndarray
    ids: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32, order="C", copy=True)
        if data.ndim != 2:
            raise EmbeddingValidationError(f"expected a 2-d matrix, got shape {data.shape}")
        n, d = data.shape
        if n < 1:
            raise EmbeddingValidationError("matrix must hold at least one row")
        if d < 2:
            raise EmbeddingValidationError(f"dimension must be at least 2, got {d}")
        if not np.all(np.isfinite(data)):
            row = int(np.argwhere(~np.isfinite(data))[0][0])
            raise EmbeddingValidationError(f"non-finite value in row {row}")
        object.__setattr__(self, "data", _readonly(data))

        if self.ids is not None:
            ids = tuple(str(i) for i in self.ids)
            if len(ids) != n:
                raise EmbeddingValidationError(f"{len(ids)} ids for {n} rows")
            if len(set(ids)) != n:
                raise EmbeddingValidationError("ids must be unique")
            object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def rows(self, indices: Sequence[int]) -> np.ndarray:
        """Rows as float64, the precision every loss is accumulated in."""
        return self.data[np.asarray(indices, dtype=np.int64)].astype(np.float64)

    def as_float64(self) -> np.ndarray:
        return self.data.astype(np.float64)


@dataclass(frozen=True)
class PairDataset:
    """
    Sentence pairs (row indices into an EmbeddingMatrix) with gold scores in [0, 5]
    """

    index_a: np.ndarray
    index_b: np.ndarray
    scores: np.ndarray
    lines: Optional[Tuple[int, ...]] = None
    name: str = "dev"

    def __post_init__(self):
        index_a = np.asarray(self.index_a, dtype=np.int64).copy()
        index_b = np.asarray(self.index_b, dtype=np.int64).copy()
        scores = np.asarray(self.scores, dtype=np.float64).copy()
        if not (index_a.ndim == index_b.ndim == scores.ndim == 1):
            raise PairValidationError("pair columns must be 1-d")
        if not (len(index_a) == len(index_b) == len(scores)):
            raise PairValidationError("pair columns differ in length")
        lines = self.lines if self.lines is not None else tuple(range(1, len(scores) + 1))
        for pos in range(len(scores)):
            if index_a[pos] < 0 or index_b[pos] < 0:
                raise PairValidationError("negative sentence index", line=lines[pos])
            score = scores[pos]
            if not np.isfinite(score) or score < GOLD_MIN or score > GOLD_MAX:
                raise PairValidationError(
                    f"gold score {score} outside [{GOLD_MIN:g}, {GOLD_MAX:g}]", line=lines[pos]
                )
        object.__setattr__(self, "index_a", _readonly(index_a))
        object.__setattr__(self, "index_b", _readonly(index_b))
        object.__setattr__(self, "scores", _readonly(scores))
        object.__setattr__(self, "lines", tuple(int(line) for line in lines))

    def __len__(self) -> int:
        return len(self.scores)

    @property
    def pairs(self) -> Tuple[Tuple[int, int, float], ...]:
        return tuple(
            (int(a), int(b), float(s)) for a, b, s in zip(self.index_a, self.index_b, self.scores)
        )

    def validate_against(self, matrix: EmbeddingMatrix) -> "PairDataset":
        """
        Check every index addresses a row of `matrix`
        """
        for pos in range(len(self)):
            for index in (self.index_a[pos], self.index_b[pos]):
                if index >= matrix.n:
                    raise PairValidationError(
                        f"sentence index {int(index)} out of range for {matrix.n} rows",
                        line=self.lines[pos],
                    )
        return self
