"""Exception hierarchy shared across the package."""


class RelayJSCCError(Exception):
    """Base class for all package errors."""


class ConfigurationError(RelayJSCCError, ValueError):
    """Inconsistent or invalid configuration (shapes, gains, unknown keys)."""


class DegenerateSignalError(RelayJSCCError, ValueError):
    """A codeword with zero power cannot be normalized."""


class CheckpointMismatchError(ConfigurationError):
    """A checkpoint was produced by a different configuration than the current run."""

    def __init__(self, diff):
        self.diff = dict(diff)
        lines = [f"  {key}: checkpoint={a!r} current={b!r}" for key, (a, b) in sorted(self.diff.items())]
        super().__init__("checkpoint config does not match current config:\n" + "\n".join(lines))


class NonFiniteLossError(RelayJSCCError, RuntimeError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot


class CodecUnavailableError(RelayJSCCError, RuntimeError):
    """The external image codec could not be found or failed to run."""


class DatasetError(RelayJSCCError, RuntimeError):
    """Dataset archive missing, corrupt, or failing its checksum."""
