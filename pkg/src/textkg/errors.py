"""Exception types shared across the pipeline stages."""

from __future__ import annotations


class TextKGError(Exception):
    """Base class for all package errors."""


class ValidationError(TextKGError):
    """A value violates a data-model invariant (empty label, bad cluster map, ...)."""


class GraphParseError(TextKGError):
    """A serialized graph could not be parsed."""

    def __init__(self, message: str, byte_offset: int | None = None):
        super().__init__(message)
        self.byte_offset = byte_offset


class SchemaVersionError(TextKGError):
    """An artifact file carries an unsupported format version."""


class ConfigurationError(TextKGError):
    """A backend or parameter set is not usable as configured."""


class ModelResponseError(TextKGError):
    """The model produced unusable output after all retries.

    Carries the raw text of the last response so callers can log or inspect it.
    """

    def __init__(self, message: str, raw_output: str = ""):
        super().__init__(message)
        self.raw_output = raw_output


class PipelineError(TextKGError):
    """A whole pipeline stage failed (e.g. every chunk errored out)."""
