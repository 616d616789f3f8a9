"""Exception types shared across the package."""


class SecureBoostError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SecureBoostError, ValueError):
    """Invalid parameters, key sizes or run configuration."""


class DomainError(SecureBoostError, ValueError):
    """A value lies outside the domain an operation accepts."""


class KeyMismatchError(SecureBoostError, ValueError):
    """Ciphertexts or keys from different key pairs were combined."""


class ValidationError(SecureBoostError, ValueError):
    """Malformed user input (duplicate ids, missing columns, ...)."""


class InputError(SecureBoostError, ValueError):
    """Prediction input does not match what the model expects."""


class ProtocolError(SecureBoostError):
    """A party received a message it cannot act on, or a peer aborted."""


class TransportError(ProtocolError):
    """The underlying channel failed or timed out."""
