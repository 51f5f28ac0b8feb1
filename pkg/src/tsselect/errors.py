"""Exception hierarchy.

Every error raised by the library derives from :class:`TsSelectError`. The
three intermediate classes map onto CLI exit codes: usage problems exit 1,
data problems exit 2 and provider problems exit 3.
"""


class TsSelectError(Exception):
    exit_code = 1


class UsageError(TsSelectError):
    exit_code = 1


class DataError(TsSelectError):
    exit_code = 2


class ProviderError(TsSelectError):
    """Non-retryable (or retries exhausted) provider response."""

    exit_code = 3

    def __init__(self, status=None, body="", message=None):
        self.status = status
        self.body = body[:300] if body else ""
        super().__init__(message or f"provider returned status {status}: {self.body}")


# core_data
class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptySeries(DataError):
    pass


class WindowTooLong(DataError):
    pass


# model_space
class DuplicateValue(UsageError):
    pass


class EmptyGrid(UsageError):
    pass


# meta_features / forecasters
class WindowTooShort(DataError):
    pass


class TooShort(DataError):
    pass


class EmptyInput(DataError):
    pass


class CatalogMismatch(DataError):
    pass


# performance_matrix
class FormatError(DataError):
    pass


class SpaceMismatch(DataError):
    pass


class DimensionError(DataError):
    pass


class UnknownDataset(DataError):
    pass


class AllMissing(DataError):
    pass


# prompting
class TemplateMissing(UsageError):
    pass


class MetaFeaturesRequired(UsageError):
    pass


# llm_client
class MissingCredential(ProviderError):
    def __init__(self, env_var):
        self.env_var = env_var
        super().__init__(message=f"credential environment variable {env_var!r} is not set")


class EndpointUnreachable(ProviderError):
    def __init__(self, endpoint, attempts, cause=None):
        self.endpoint = endpoint
        self.attempts = attempts
        super().__init__(message=f"{endpoint} unreachable after {attempts} attempt(s): {cause}")


class FixtureMiss(ProviderError):
    def __init__(self, key):
        self.key = key
        super().__init__(message=f"no recorded fixture for request hash {key}")


class StoreUnwritable(ProviderError):
    def __init__(self, path, cause=None):
        super().__init__(message=f"fixture store {path} is not writable: {cause}")


class HashCollisionGuard(ProviderError):
    def __init__(self, key, why):
        self.key = key
        super().__init__(message=f"refusing to overwrite fixture {key}: {why}")


# selectors
class EmptySpace(UsageError):
    pass


class NotInSpace(UsageError):
    pass


class AllMissingForFamily(DataError):
    pass


class TooFewDatasets(DataError):
    pass


class ShapeMismatch(DataError):
    pass


# harness
class KExceedsSpace(UsageError):
    pass


class MissingEntry(DataError):
    pass


class Unwritable(DataError):
    pass
