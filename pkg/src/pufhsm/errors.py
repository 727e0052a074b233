"""Exception types shared across the package."""


class HsmError(Exception):
    """Base class for domain errors raised by this package."""


class FormatError(HsmError):
    """A file or stream does not follow the expected byte layout."""


class WrongKeyError(HsmError):
    """The wrapped AES key did not unwrap to a valid block under this private key."""


class CorruptionError(HsmError):
    """Decrypted payload does not match the stored integrity digest."""


class UnknownChallengeError(HsmError, KeyError):
    """A table-backed PUF was asked for a challenge it has no row for."""

    def __str__(self) -> str:
        return Exception.__str__(self)


class UnsupportedOperationError(HsmError, TypeError):
    pass


class FrameError(HsmError):
    """Base class for wire-frame decoding failures."""


class BadSof(FrameError):
    pass


class BadCrc(FrameError):
    pass


class Oversize(FrameError):
    pass


class Truncated(FrameError):
    pass


class UnknownMessageType(FrameError):
    pass
