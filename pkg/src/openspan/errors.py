"""Exception types shared across the package.

Every error raised on purpose derives from OpenSpanError so callers (and the
CLI exit-code mapping) can distinguish our failures from genuine bugs.
"""

from __future__ import annotations


class OpenSpanError(Exception):
    """Base class for all deliberate failures."""


class DataError(OpenSpanError):
    """Malformed or invalid input data.

    Carries the source line number when the problem is tied to one record.
    """

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f"{path}:"
        if line is not None:
            loc = f"{loc}{line}:"
        super().__init__(f"{loc} {message}" if loc else message)
        self.path = path
        self.line = line


class ConfigError(OpenSpanError):
    """Invalid configuration value; message names the offending field."""


class DimensionError(OpenSpanError):
    """Shape mismatch in a tensor operation; message names both operands."""


class GradientError(OpenSpanError):
    """Tape misuse: double backward, non-scalar loss, cross-tape tensors."""


class NonFiniteError(OpenSpanError):
    """A gradient or loss stopped being finite; message names the culprit."""


class SequenceOverflowError(OpenSpanError):
    """A token sequence does not fit the encoder's maximum length.

    For joint label+text sequences, `fits_labels` reports how many of the
    requested labels would have fit alongside the text.
    """

    def __init__(self, message: str, *, needed: int, limit: int, fits_labels: int | None = None):
        super().__init__(message)
        self.needed = needed
        self.limit = limit
        self.fits_labels = fits_labels


class StaleCacheError(OpenSpanError):
    """A label cache was built under different parameters than the scorer's."""


class CheckpointError(OpenSpanError):
    """Unreadable checkpoint or incompatible model/tokenizer combination."""


class TrainingError(OpenSpanError):
    """Training aborted; message carries the offending batch's example ids."""
