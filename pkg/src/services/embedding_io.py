"""Embedding matrices (EMB1 binary / TSV), pair datasets and checkpoints on disk."""
import json
import logging
import os
import struct
from pathlib import Path
from typing import List, Literal, Optional, Union

import numpy as np
from pydantic import ValidationError
from safetensors.numpy import load_file, save_file

from src.config import CHECKPOINT_VERSION, EMBEDDING_MAGIC
from src.errors import (
    CheckpointSchemaError,
    CheckpointVersionError,
    DclrError,
    DimensionMismatchError,
    EmbeddingFormatError,
    EmbeddingValidationError,
    MalformedHeaderError,
    NonFiniteValueError,
    PairValidationError,
    TrailingBytesError,
    TruncatedPayloadError,
)
from src.models.checkpoint import AdamState, Checkpoint
from src.models.embeddings import EmbeddingMatrix, PairDataset
from src.models.head import PARAM_NAMES, HeadParams
from src.schemas.config import AdamMetadata, CheckpointMetadata

logger = logging.getLogger(__name__)

EmbeddingFormat = Literal["binary", "tsv"]
PathLike = Union[str, Path]

HEADER = struct.Struct("<4sII")
TSV_SUFFIXES = {".tsv", ".txt"}


def infer_format(path: PathLike) -> EmbeddingFormat:
    return "tsv" if Path(path).suffix.lower() in TSV_SUFFIXES else "binary"


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as e:
        raise DclrError(f"Error reading {path}: {e}") from e


def _line_of(buf: bytes, offset: int) -> int:
    return buf.count(b"\n", 0, offset) + 1


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except OSError as e:
        raise DclrError(f"Error writing {path}: {e}") from e


def _load_binary(path: Path) -> EmbeddingMatrix:
    buf = _read_bytes(path)
    if len(buf) < HEADER.size:
        raise MalformedHeaderError(
            f"header needs {HEADER.size} bytes, file has {len(buf)}", path=str(path), offset=len(buf)
        )
    magic, n, d = HEADER.unpack_from(buf, 0)
    if magic != EMBEDDING_MAGIC:
        raise MalformedHeaderError(f"bad magic {magic!r}, expected {EMBEDDING_MAGIC!r}", path=str(path), offset=0)
    if n < 1:
        raise MalformedHeaderError(f"row count must be at least 1, got {n}", path=str(path), offset=4)
    if d < 2:
        raise MalformedHeaderError(f"dimension must be at least 2, got {d}", path=str(path), offset=8)

    expected = HEADER.size + 4 * n * d
    if len(buf) < expected:
        raise TruncatedPayloadError(
            f"header declares {n}x{d} floats ({expected} bytes), file ends after {len(buf)} bytes",
            path=str(path),
            offset=len(buf),
        )
    if len(buf) > expected:
        raise TrailingBytesError(
            f"{len(buf) - expected} unexpected bytes after the {n}x{d} payload",
            path=str(path),
            offset=expected,
        )
    data = np.frombuffer(buf, dtype="<f4", count=n * d, offset=HEADER.size).reshape(n, d)
    bad = np.flatnonzero(~np.isfinite(data.ravel()))
    if bad.size:
        raise NonFiniteValueError(
            f"non-finite value in row {bad[0] // d}", path=str(path), offset=HEADER.size + 4 * int(bad[0])
        )
    return EmbeddingMatrix(data.astype(np.float32))


def _load_tsv(path: Path, has_ids: bool) -> EmbeddingMatrix:
    buf = _read_bytes(path)
    try:
        lines = buf.decode("utf-8").splitlines()
    except UnicodeDecodeError as e:
        raise EmbeddingFormatError(
            "invalid UTF-8", path=str(path), offset=e.start, line=_line_of(buf, e.start)
        ) from None

    rows: List[np.ndarray] = []
    ids: List[str] = []
    d: Optional[int] = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = line.rstrip("\n").split("\t")
        if has_ids:
            ids.append(fields[0])
            fields = fields[1:]
        try:
            values = np.array([float(v) for v in fields], dtype=np.float64)
        except ValueError:
            raise EmbeddingFormatError("unparseable decimal value", path=str(path), line=lineno) from None
        if d is None:
            d = len(values)
            if d < 2:
                raise DimensionMismatchError(f"rows need at least 2 values, got {d}", path=str(path), line=lineno)
        elif len(values) != d:
            raise DimensionMismatchError(f"expected {d} values, got {len(values)}", path=str(path), line=lineno)
        as_float32 = values.astype(np.float32)
        if not np.all(np.isfinite(as_float32)):
            raise NonFiniteValueError("non-finite value", path=str(path), line=lineno)
        rows.append(as_float32)

    if not rows:
        raise EmbeddingFormatError("no embedding rows", path=str(path), line=len(lines))
    try:
        return EmbeddingMatrix(np.vstack(rows), ids=tuple(ids) if has_ids else None)
    except EmbeddingValidationError as e:
        raise EmbeddingFormatError(str(e), path=str(path)) from e


def load_embeddings(path: PathLike, format: EmbeddingFormat = "binary", has_ids: bool = False) -> EmbeddingMatrix:
    """
    Load an embedding matrix; every invariant violation is reported with the
    byte offset (binary) or line number (tsv) where it was found
    """
    path = Path(path)
    if format == "binary":
        matrix = _load_binary(path)
    elif format == "tsv":
        matrix = _load_tsv(path, has_ids)
    else:
        raise ValueError(f"unknown embedding format {format!r}")
    logger.debug("loaded %dx%d embeddings from %s", matrix.n, matrix.d, path)
    return matrix


def save_embeddings(matrix: EmbeddingMatrix, path: PathLike, format: EmbeddingFormat = "binary") -> None:
    """
    binary: EMB1 magic, u32 n, u32 d, n*d little-endian float32 row-major.
    tsv: one row per line, 9 significant digits (exact for float32), ids first when present
    """
    path = Path(path)
    if format == "binary":
        payload = HEADER.pack(EMBEDDING_MAGIC, matrix.n, matrix.d) + matrix.data.astype("<f4").tobytes()
    elif format == "tsv":
        lines = []
        for r, row in enumerate(matrix.data):
            fields = [format_float(v) for v in row]
            if matrix.ids is not None:
                fields.insert(0, matrix.ids[r])
            lines.append("\t".join(fields))
        payload = ("\n".join(lines) + "\n").encode("utf-8")
    else:
        raise ValueError(f"unknown embedding format {format!r}")
    _atomic_write(path, payload)


def format_float(value: float) -> str:
    return format(float(value), ".9g")


def load_pair_dataset(
    path: PathLike, matrix: Optional[EmbeddingMatrix] = None, name: Optional[str] = None
) -> PairDataset:
    """
    Three tab-separated columns per line: index_a, index_b, gold score in [0, 5].
    With `matrix`, indices are also checked against its row count
    """
    path = Path(path)
    buf = _read_bytes(path)
    try:
        lines = buf.decode("utf-8").splitlines()
    except UnicodeDecodeError as e:
        raise PairValidationError(
            f"{path}: invalid UTF-8 at byte offset {e.start}", line=_line_of(buf, e.start)
        ) from None

    index_a, index_b, scores, linenos = [], [], [], []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise PairValidationError(f"expected 3 columns, got {len(fields)}", line=lineno)
        try:
            a, b, score = int(fields[0]), int(fields[1]), float(fields[2])
        except ValueError:
            raise PairValidationError("expected two integer indices and a decimal score", line=lineno) from None
        index_a.append(a)
        index_b.append(b)
        scores.append(score)
        linenos.append(lineno)

    dataset = PairDataset(
        index_a=np.array(index_a, dtype=np.int64),
        index_b=np.array(index_b, dtype=np.int64),
        scores=np.array(scores, dtype=np.float64),
        lines=tuple(linenos),
        name=name or path.stem,
    )
    if matrix is not None:
        dataset.validate_against(matrix)
    return dataset


def save_pair_dataset(dataset: PairDataset, path: PathLike) -> None:
    lines = [f"{a}\t{b}\t{format_float(s)}" for a, b, s in dataset.pairs]
    _atomic_write(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))


def checkpoint_paths(path: PathLike):
    """(parameter blob, JSON sidecar) for a checkpoint stem."""
    path = Path(path)
    if path.suffix in (".json", ".safetensors"):
        path = path.with_suffix("")
    return path.with_name(path.name + ".safetensors"), path.with_name(path.name + ".json")


def save_checkpoint(ckpt: Checkpoint, path: PathLike) -> None:
    blob_path, meta_path = checkpoint_paths(path)
    tensors = {}
    for name, array in ckpt.params.arrays().items():
        tensors[f"head.{name}"] = np.ascontiguousarray(array, dtype=np.float64)
    for name in PARAM_NAMES:
        tensors[f"adam.m.{name}"] = np.ascontiguousarray(ckpt.optimizer.m[name], dtype=np.float64)
        tensors[f"adam.v.{name}"] = np.ascontiguousarray(ckpt.optimizer.v[name], dtype=np.float64)

    metadata = CheckpointMetadata(
        version=CHECKPOINT_VERSION,
        step=ckpt.step,
        dev_metric=ckpt.dev_metric,
        config=ckpt.config,
        head=ckpt.params.shape,
        head_version=ckpt.params.version,
        optimizer=AdamMetadata(
            step=ckpt.optimizer.step,
            beta1=ckpt.optimizer.beta1,
            beta2=ckpt.optimizer.beta2,
            eps=ckpt.optimizer.eps,
        ),
    )
    sidecar = json.dumps(metadata.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"
    tmp_blob = blob_path.with_name(blob_path.name + ".tmp")
    tmp_meta = meta_path.with_name(meta_path.name + ".tmp")
    # both temp files are complete before either rename
    try:
        save_file(tensors, str(tmp_blob))
        tmp_meta.write_bytes(sidecar.encode("utf-8"))
        os.replace(tmp_blob, blob_path)
        os.replace(tmp_meta, meta_path)
    except OSError as e:
        raise DclrError(f"Error writing checkpoint {blob_path}: {e}") from e
    logger.info("saved checkpoint at step %d to %s", ckpt.step, blob_path)


def load_checkpoint(path: PathLike) -> Checkpoint:
    blob_path, meta_path = checkpoint_paths(path)
    try:
        raw = json.loads(_read_bytes(meta_path).decode("utf-8"))
    except json.JSONDecodeError as e:
        raise CheckpointSchemaError(f"{meta_path}: invalid JSON ({e})") from e
    if not isinstance(raw, dict):
        raise CheckpointSchemaError(f"{meta_path}: metadata must be a JSON object")
    found = raw.get("version")
    if found != CHECKPOINT_VERSION:
        raise CheckpointVersionError(str(found), CHECKPOINT_VERSION)
    try:
        metadata = CheckpointMetadata.model_validate(raw)
    except ValidationError as e:
        raise CheckpointSchemaError(f"{meta_path}: {e}") from e

    if not blob_path.exists():
        raise CheckpointSchemaError(f"parameter blob {blob_path} is missing")
    try:
        tensors = load_file(str(blob_path))
    except Exception as e:
        raise CheckpointSchemaError(f"{blob_path}: unreadable parameter blob ({e})") from e
    expected = [f"head.{n}" for n in PARAM_NAMES]
    expected += [f"adam.{kind}.{n}" for kind in ("m", "v") for n in PARAM_NAMES]
    missing = [key for key in expected if key not in tensors]
    if missing:
        raise CheckpointSchemaError(f"{blob_path}: missing tensors {', '.join(missing)}")

    params = HeadParams(
        **{n: tensors[f"head.{n}"] for n in PARAM_NAMES},
        activation=metadata.head.activation,
        dropout=metadata.head.dropout,
        version=metadata.head_version,
    )
    if params.shape != metadata.head:
        raise CheckpointSchemaError(f"{blob_path}: tensor shapes disagree with the metadata head shape")
    optimizer = AdamState(
        m={n: tensors[f"adam.m.{n}"] for n in PARAM_NAMES},
        v={n: tensors[f"adam.v.{n}"] for n in PARAM_NAMES},
        step=metadata.optimizer.step,
        beta1=metadata.optimizer.beta1,
        beta2=metadata.optimizer.beta2,
        eps=metadata.optimizer.eps,
    )
    return Checkpoint(
        params=params,
        optimizer=optimizer,
        step=metadata.step,
        config=metadata.config,
        dev_metric=metadata.dev_metric,
    )
