"""Exception hierarchy shared across the toolkit.

The CLI maps these onto process exit codes: usage problems exit 1,
:class:`DataError` (and subclasses) exit 2, :class:`NumericError` exits 3.
"""


class TubelinkError(Exception):
    """Base class for all toolkit errors."""


class DataError(TubelinkError):
    """Bad input data: malformed files, schema violations, missing paths."""


class SchemaError(DataError):
    """A record violates the file-format schema (wrong lengths, bad values)."""


class ModelCompatibilityError(DataError):
    """A model file has the wrong kind or an unsupported version."""


class ModelInputError(DataError):
    """Model applied to inputs it was not trained for (e.g. appearance mismatch)."""


class InconsistentFeaturesError(DataError):
    """Pairwise features requested for detections with mismatched descriptors."""


class DatasetTooSmallError(DataError):
    """Ground truth does not contain enough tracks/frames to sample from."""


class NumericError(TubelinkError):
    """Numeric failure: divergence, degenerate norms, NaNs."""


class DegenerateEmbeddingError(NumericError):
    """Affine map output has (near-)zero norm and cannot be L2-normalized."""
