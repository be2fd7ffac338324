"""Exception hierarchy shared across the package.

Every error a caller is expected to catch has its own class so that
failure modes stay distinguishable (bad file magic vs. truncation vs.
shape drift, and so on). All of them derive from :class:`GmmError`.
"""


class GmmError(Exception):
    """Base class for all errors raised by this package."""

    category = "internal"


class ConfigurationError(GmmError, ValueError):
    """Invalid hyper-parameter or setup request (e.g. non-square K)."""

    category = "config"


class ShapeError(GmmError, ValueError):
    """Array/vector dimensions do not match the model or file header."""

    category = "shape"


class EmptyBatchError(GmmError, ValueError):
    """An operation that needs at least one sample received none."""

    category = "empty-batch"


class NonFiniteGradientError(GmmError, FloatingPointError):
    """A gradient block went NaN/inf during training; names the block."""

    category = "non-finite-gradient"


class MetricUndefinedError(GmmError, ValueError):
    """A cluster validity index is undefined for the given assignment."""

    category = "metric-undefined"


class DataFormatError(GmmError):
    """Base class for dataset ingestion failures."""

    category = "data"


class MagicNumberError(DataFormatError):
    """IDX file does not start with a recognized magic number."""


class TruncatedPayloadError(DataFormatError):
    """File ended before the payload announced in its header."""


class CountMismatchError(DataFormatError):
    """Image and label files declare different sample counts."""


class CsvParseError(DataFormatError):
    """Ragged row or non-numeric cell; carries row/column position."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ModelFileError(GmmError):
    """Base class for model persistence failures."""

    category = "model-file"


class ModelVersionError(ModelFileError):
    """Model file carries an unknown magic string or format version."""


class ModelParseError(ModelFileError):
    """Model file is truncated or syntactically malformed."""
