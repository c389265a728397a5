"""Exception types shared across the package."""


class FormatError(ValueError):
    """A binary file failed validation; message names the offending field."""


class InsufficientDataError(ValueError):
    """A sampling request exceeds what the dataset can provide."""


class NumericalError(RuntimeError):
    """Non-finite values or a non-convergent numerical routine."""


class AggregationError(ValueError):
    """Run results cannot be aggregated together."""
