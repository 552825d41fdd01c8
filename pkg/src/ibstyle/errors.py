"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: usage problems are plain
``ValueError`` (exit 1), data/format problems exit 2, numeric failures exit 3.
"""


class IngestionError(Exception):
    """A data directory or image file could not be read or decoded."""


class FormatError(Exception):
    """A weight archive or checkpoint is malformed or incomplete."""


class ConfigMismatchError(FormatError):
    """A checkpoint is incompatible with the encoder or config it is used with."""


class NumericError(Exception):
    """A non-finite value surfaced where the pipeline requires finite numbers."""
