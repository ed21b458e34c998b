"""Exception hierarchy shared across the package.

Every error carries a ``details`` dict so callers (and the CLI) can report
structured context instead of parsing messages.
"""

from __future__ import annotations


class RoughflowError(Exception):
    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details

    def __str__(self) -> str:
        base = super().__str__()
        if self.details:
            extra = ", ".join(f"{k}={v!r}" for k, v in sorted(self.details.items()))
            return f"{base} ({extra})"
        return base


class ArgumentError(RoughflowError, ValueError):
    """Caller passed incompatible or out-of-contract arguments."""


class ConfigError(RoughflowError, ValueError):
    """A configuration document violates the schema or its semantics."""


class NumericalError(RoughflowError, ArithmeticError):
    """A numerical stage failed (factorization, conditioning, regime)."""


class DivergenceError(NumericalError):
    """State blew past the magnitude guard; details carry the blow-up time."""
