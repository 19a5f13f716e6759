"""Exception hierarchy shared across the package."""

from __future__ import annotations


class KGQAError(Exception):
    """Base class for all errors raised by kgqa."""


class ValidationError(KGQAError, ValueError):
    """Input violates a data-model invariant."""


class ReferentialIntegrityError(ValidationError):
    """An edge references a node id that does not exist."""

    def __init__(self, missing_id: str, message: str | None = None) -> None:
        self.missing_id = missing_id
        super().__init__(message or f"unknown node id: {missing_id!r}")


class DimensionMismatchError(ValidationError):
    """An embedding does not match the graph's declared dimension."""


class ParseError(ValidationError):
    """A graph, dataset or config file could not be parsed."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None) -> None:
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


class GraphParseError(ParseError):
    """A graph file could not be parsed."""


class EmptyDocumentError(ValidationError):
    """Segmentation was asked to process a whitespace-only document."""


class NotFoundError(KGQAError, LookupError):
    """A requested node or type does not exist."""


class UndefinedSimilarityError(KGQAError, ValueError):
    """Cosine similarity requested for a zero vector."""


class ProviderError(KGQAError):
    """A model provider failed or returned a malformed response."""

    def __init__(self, message: str, step: str | None = None) -> None:
        self.step = step
        super().__init__(message)
