"""Exception hierarchy; the CLI maps these onto exit codes."""


class HDCQRError(Exception):
    pass


class DataError(HDCQRError, ValueError):
    """Malformed input data or configuration."""


class UnboundedError(HDCQRError):
    """The L1 objective is unbounded below."""


class IdentifiabilityError(HDCQRError):
    """A conditional quantile could not be identified at some grid level."""

    def __init__(self, message, tau=None, last_level=None):
        super().__init__(message)
        self.tau = tau
        self.last_level = last_level


class NumericalError(HDCQRError):
    """Simplex failure: iteration limit or singular pivot."""
