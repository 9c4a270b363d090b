"""Exception hierarchy shared by all decodekit modules."""


class DecodeKitError(Exception):
    """Base class for every error raised by this package."""


class TerminatedPrefixError(DecodeKitError):
    """A prefix already ending in EOS was asked for a continuation."""


class UnknownTokenError(DecodeKitError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EmptySequenceError(DecodeKitError):
    """A sequence has no scored tokens after BOS."""


class MissingDistributionError(DecodeKitError, KeyError):
    """A table model has no entry (and no default) for a prefix."""

    def __str__(self):
        return Exception.__str__(self)


class EmptyCorpusError(DecodeKitError):
    pass


class EnumerationTooLargeError(DecodeKitError):
    pass


class InvalidParameterError(DecodeKitError, ValueError):
    pass


class UndefinedMetricError(DecodeKitError):
    """Metric has no value for this input (e.g. string shorter than n)."""


class InvalidSetError(DecodeKitError):
    pass


class InvalidReferenceError(DecodeKitError, ValueError):
    pass


class InsufficientSamplesError(DecodeKitError):
    pass


class UndefinedCorrelationError(DecodeKitError):
    pass


class PairingError(DecodeKitError, ValueError):
    pass


class InvalidPValueError(DecodeKitError, ValueError):
    pass


class MissingRatingError(DecodeKitError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class InsufficientDataError(DecodeKitError):
    pass


class JoinError(DecodeKitError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ConfigError(DecodeKitError):
    pass


class SerializationError(DecodeKitError, ValueError):
    """Unknown document version or malformed model file."""
