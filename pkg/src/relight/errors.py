"""Error taxonomy shared by the library and the CLI.

Each error carries a category string; the CLI maps categories to exit
codes so scripted callers can tell a bad config from a bad checkpoint.
"""


class RelightError(Exception):
    """Base class for errors the CLI reports as `error[<category>]: ...`."""

    category = "internal"


class ConfigError(RelightError):
    category = "config"


class DataError(RelightError):
    category = "data"


class ShapeError(RelightError):
    category = "shape"


class CheckpointError(RelightError):
    category = "checkpoint"


class IOFailure(RelightError):
    category = "io"
