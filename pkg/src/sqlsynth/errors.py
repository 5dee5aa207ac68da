"""Exception hierarchy shared across the toolkit."""


class SqlSynthError(Exception):
    """Base class for all toolkit errors."""


class SchemaInvariantError(SqlSynthError):
    """A schema record violates a structural invariant (names the db_id)."""


class DataParseError(SqlSynthError):
    """A data file could not be parsed; carries the offending entry index."""

    def __init__(self, message: str, entry_index: int | None = None):
        super().__init__(message)
        self.entry_index = entry_index


class UnknownDbError(SqlSynthError):
    """An example references a db_id with no loaded schema."""


class SqlTokenError(SqlSynthError):
    """SQL text could not be tokenized."""


class SqlResolutionError(SqlSynthError):
    """An identifier in a SQL query does not resolve against the schema."""


class UnsupportedConstructError(SqlSynthError):
    """A SQL construct outside the supported subset; names the construct."""

    def __init__(self, construct: str):
        super().__init__(f"unsupported SQL construct: {construct}")
        self.construct = construct


class UntrainedModelError(SqlSynthError):
    """Inference was requested on a model that has not been trained."""


class BackendUnavailableError(SqlSynthError):
    """A pluggable model backend (or its weights) is not installed."""


class ConfigError(SqlSynthError):
    """Invalid or inconsistent run configuration."""
