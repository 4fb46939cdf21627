"""Exception taxonomy shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with an operation's contract."""


class ConfigError(ValueError):
    """A configuration value violates its documented constraints."""


class DataError(ValueError):
    """Input data is malformed or outside the accepted range."""


class UsageError(RuntimeError):
    """An API was called in an unsupported way or order."""


class FormatError(ValueError):
    """A serialized file violates the expected binary layout."""


class CheckpointVersionError(FormatError):
    """Checkpoint declares a format version unknown to this build."""


class ConfigMismatchError(ConfigError):
    """A loaded artifact does not fit the model it is applied to."""
