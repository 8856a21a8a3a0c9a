"""
DEDN Toolkit Exceptions

This module defines the error hierarchy shared by the library and the
command-line interface. Each error carries the process exit code the
CLI reports for it.
"""


class DednError(Exception):
    """Base class for every error raised by the toolkit."""

    exit_code = 1


class DimensionError(DednError):
    """Array shapes do not agree."""


class ContractError(DednError):
    """A precondition of an operation does not hold."""


class ConfigError(DednError):
    """
    Invalid hyperparameter or flag value.

    Reported as a usage error by the CLI.
    """

    exit_code = 2


class PartitionError(DednError):
    """Attribute cluster partition is not a disjoint cover."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class EmptySplitError(DednError):
    """A split needed for evaluation has no samples."""


class NonFiniteLossError(DednError):
    """A training loss term became NaN or infinite."""

    def __init__(self, term, epoch, step):
        super().__init__(
            f'Non-finite loss term {term!r} at epoch {epoch}, step {step}.'
        )
        self.term = term


# =============================================================================
# DATASET BUNDLE ERRORS
# =============================================================================

class BundleValidationError(DednError):
    """Dataset bundle failed validation."""


class MissingFileError(BundleValidationError):
    """A required bundle file is absent."""


class SizeMismatchError(BundleValidationError):
    """A binary array file does not match the size declared in meta.json."""

    def __init__(self, filename, expected, actual):
        super().__init__(
            f'{filename}: expected {expected} bytes, found {actual} bytes.'
        )
        self.expected = expected
        self.actual = actual


class LabelRangeError(BundleValidationError):
    """A label lies outside [0, K)."""


class SplitViolationError(BundleValidationError):
    """Seen/unseen split or train/test indices are inconsistent."""


class MetaError(BundleValidationError):
    """meta.json is malformed."""


# =============================================================================
# CHECKPOINT ERRORS
# =============================================================================

class CheckpointError(DednError):
    """Checkpoint file cannot be read."""


class CheckpointFormatError(CheckpointError):
    """Magic bytes or header are not a DEDN checkpoint."""


class CheckpointVersionError(CheckpointError):
    """Unsupported checkpoint format version."""


class CheckpointDimensionError(CheckpointError):
    """Blob shapes declared in the header disagree with the model dims."""


class CheckpointSizeError(CheckpointError):
    """Blob payload length disagrees with the header."""
