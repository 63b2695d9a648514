"""Exception types shared across the package.

The CLI maps these onto exit codes: DataError -> 3, NumericError -> 4,
anything argument-shaped -> 2.
"""


class F0VCError(Exception):
    """Base class for all package errors."""


class AudioError(F0VCError):
    """Unreadable or unsupported audio input."""


class ShapeError(F0VCError):
    """Array shape mismatch; message carries both shapes."""


class DataError(F0VCError):
    """Corpus, manifest, or feature-cache problem."""


class FormatError(F0VCError):
    """Bad magic, version, or truncation in a serialized file."""


class ConfigError(F0VCError):
    """Invalid or mismatched configuration."""


class NumericError(F0VCError):
    """NaN/Inf encountered where finite values are required."""
