"""Exception types shared across the package."""


class StagediffError(Exception):
    """Base class for all package-specific errors."""


class NumericInputError(StagediffError):
    """Non-finite or malformed numeric input."""


class PromptParseError(StagediffError):
    """Prompt text violates the supported grammar.

    ``index`` is the offending token position, or -1 when the whole
    input is unusable (e.g. empty).
    """

    def __init__(self, message, index=-1):
        super().__init__(message)
        self.index = index


class ConfigError(StagediffError):
    """Invalid configuration value (dims, thresholds, scales)."""


class ShapeError(StagediffError):
    """Array shape mismatch between cooperating components."""


class SpanError(StagediffError):
    """Invalid token span for a subject map."""


class DegenerateMapError(StagediffError):
    """An attention map without usable mass (all zero / constant)."""


class BoxError(StagediffError):
    """Invalid or missing component crop box."""
