"""Exception hierarchy.

Rejections at a network attachment point are ordinary return values
(see ``app.services.network.Rejected``); the exceptions here signal
programming errors, invalid parameters and unusable inputs.
"""
from typing import List


class LipsinError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(LipsinError, ValueError):
    """A parameter is outside its valid domain."""


class WidthMismatch(LipsinError, ValueError):
    """Two filters of different bit-width were combined."""


class FillFactorExceeded(LipsinError, ValueError):
    """The OR of a path's LinkIds exceeds the maximum fill factor."""

    def __init__(self, actual: float, rho_max: float):
        self.actual = actual
        self.rho_max = rho_max
        super().__init__(
            f"fill factor {actual:.4f} exceeds maximum {rho_max:.4f}; path not encodable"
        )


class CredentialFormatError(LipsinError, ValueError):
    """Encrypted FId or credential bytes have the wrong length."""


class TopologyError(LipsinError, ValueError):
    """A topology document failed to parse or validate."""

    def __init__(self, diagnostics: List[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("invalid topology:\n  " + "\n  ".join(self.diagnostics))


class Unreachable(LipsinError, LookupError):
    """No directed path connects two nodes."""

    def __init__(self, src: str, dst: str):
        self.src = src
        self.dst = dst
        super().__init__(f"{dst} is unreachable from {src}")
