"""Exception hierarchy shared by every module."""


class PrivmlError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(PrivmlError, ValueError):
    """Operand shapes are incompatible for the requested operation."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        rendered = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")


class ProtocolError(PrivmlError):
    """A protocol invariant was violated (mismatched ids, stale rounds, ...)."""


class TripleReuseError(ProtocolError):
    """A Beaver triple was presented for a second multiplication."""


class RemoteError(PrivmlError):
    """A party answered with NACK. Not retryable."""

    def __init__(self, party, reason):
        self.party = party
        self.reason = reason
        super().__init__(f"{party}: {reason}")


class PartyTimeout(PrivmlError, TimeoutError):
    """A party did not answer in time. Retryable for idempotent requests."""


class FormatError(PrivmlError, ValueError):
    """Malformed bytes: bad magic, truncated payload or unknown tag."""
