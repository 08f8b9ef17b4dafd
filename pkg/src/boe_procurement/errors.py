"""Exception hierarchy shared by every stage of the pipeline."""


class ProcurementError(Exception):
    """Base class for all errors raised by this package."""


class PreconditionError(ProcurementError, ValueError):
    """An operation was called with arguments outside its contract."""


# -- fetch -----------------------------------------------------------------

class FetchError(ProcurementError):
    pass


class NetworkError(FetchError):
    """Raised once every retry for a URL has been spent."""

    def __init__(self, url, attempts, last_status=None, cause=None):
        self.url = url
        self.attempts = attempts
        self.last_status = last_status
        self.cause = cause
        detail = f"status {last_status}" if last_status else repr(cause)
        super().__init__(f"{url}: gave up after {attempts} attempts ({detail})")


class HttpStatusError(FetchError):
    def __init__(self, url, status):
        self.url = url
        self.status = status
        super().__init__(f"{url}: HTTP {status}")


class EmptyBodyError(FetchError):
    pass


# -- parse -----------------------------------------------------------------

class StructureError(ProcurementError):
    """The document does not have the layout the parser expects."""


class RuleSetError(ProcurementError):
    pass


# -- clean -----------------------------------------------------------------

class AmbiguousNumberError(ProcurementError, ValueError):
    pass


class DateParseError(ProcurementError, ValueError):
    pass


class InconsistentAwardError(ProcurementError):
    pass


class EmptyDatasetError(ProcurementError, ValueError):
    pass


# -- store -----------------------------------------------------------------

class SchemaMismatchError(ProcurementError):
    pass


class RowParseError(ProcurementError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class ValidationError(ProcurementError):
    pass


# -- analytics -------------------------------------------------------------

class InsufficientDataError(ProcurementError, ValueError):
    pass


class DegenerateError(ProcurementError):
    pass


class SampleSizeError(ProcurementError, ValueError):
    pass


class MissingCategoryError(ProcurementError, KeyError):
    pass
