"""Exception hierarchy shared across the package."""


class FeddblError(Exception):
    """Base class for all package errors."""


class InvalidInputError(FeddblError, ValueError):
    """An argument violates a documented precondition."""


class InvalidStateError(FeddblError, RuntimeError):
    """An operation was applied to an object in the wrong state."""


class IncompatibilityError(FeddblError, ValueError):
    """Objects that must agree on shape, class count or normalization do not."""


class KeyMismatchError(IncompatibilityError):
    """Ciphertexts or updates produced under different public keys were mixed."""


class EncodingRangeError(FeddblError, ValueError):
    """A value does not fit the fixed-point integer range."""


class CapacityError(FeddblError, OverflowError):
    """A homomorphic accumulation would exhaust the packed slot guard bits."""


class ClientError(FeddblError):
    """A per-client pipeline stage failed; carries the offending client id."""

    def __init__(self, client_id: str, message: str):
        super().__init__(f"client {client_id!r}: {message}")
        self.client_id = client_id


class FormatError(FeddblError, ValueError):
    """Base class for binary file-format parse errors."""


class BadMagicError(FormatError):
    """The file does not start with the expected magic bytes."""


class UnsupportedVersionError(FormatError):
    """The file declares a format version this reader does not know."""


class TruncatedFileError(FormatError):
    """The file ended before the declared payload was complete."""


class IntegrityError(FormatError):
    """The file parsed but its contents violate a structural invariant."""
