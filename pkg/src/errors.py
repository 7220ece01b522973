from typing import Optional


class DclrError(Exception):
    """Base class for every error raised by this package."""


class EmbeddingFormatError(DclrError, ValueError):
    """A file does not parse under its declared format."""

    def __init__(
        self,
        message: str,
        path: Optional[str] = None,
        offset: Optional[int] = None,
        line: Optional[int] = None,
    ):
        self.path = path
        self.offset = offset
        self.line = line
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")


class MalformedHeaderError(EmbeddingFormatError):
    pass


class TruncatedPayloadError(EmbeddingFormatError):
    pass


class TrailingBytesError(EmbeddingFormatError):
    pass


class DimensionMismatchError(EmbeddingFormatError):
    pass


class NonFiniteValueError(EmbeddingFormatError):
    pass


class EmbeddingValidationError(DclrError, ValueError):
    pass


class PairValidationError(DclrError, ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class CheckpointError(DclrError):
    pass


class CheckpointVersionError(CheckpointError):
    def __init__(self, found: str, expected: str):
        self.found = found
        self.expected = expected
        super().__init__(
            f"checkpoint format version {found!r} is not supported (expected {expected!r})"
        )


class CheckpointSchemaError(CheckpointError, ValueError):
    pass


class SimilarityDomainError(DclrError, ValueError):
    pass


class ShapeError(DclrError, ValueError):
    pass


class HeadCacheError(DclrError, RuntimeError):
    pass


class ConfigurationError(DclrError, ValueError):
    pass


class SpearmanUndefinedError(DclrError, ValueError):
    pass
