"""Exception types shared across the package."""


class InvalidSizeError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class InvalidFrequencyError(ValueError):
    pass


class ContractError(ValueError):
    """Channel chains, strides or sizes that do not fit together."""


class StrideError(ContractError):
    pass


class DegenerateNormalizationError(ValueError):
    pass


class DegenerateFrequencyError(ValueError):
    pass


class OracleError(RuntimeError):
    """Base class for failures while querying a classifier oracle."""


class OracleTimeoutError(OracleError):
    pass


class OracleConnectionError(OracleError):
    pass


class MalformedResponseError(OracleError):
    pass


class OracleQueryError(OracleError):
    """An oracle failure annotated with where in a batch/sweep it happened."""

    def __init__(self, message, index=None, frequency=None):
        super().__init__(message)
        self.index = index
        self.frequency = frequency


class FormatError(ValueError):
    """Base class for file parsing problems."""


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class InvalidHeaderError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass
