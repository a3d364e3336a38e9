"""Exception hierarchy shared by all unilearn modules.

Every error carries a machine-readable ``code`` string; the gateway maps
codes onto fault envelopes.
"""

from __future__ import annotations


class UnilearnError(Exception):
    """Base class. ``code`` identifies the failure for programmatic callers."""

    code = "INTERNAL"

    def __init__(self, code: str, message: str) -> None:
        super().__init__(message)
        self.code = code
        self.message = message

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


class EnvelopeError(UnilearnError):
    pass


class RegistryError(UnilearnError):
    pass


class StoreError(UnilearnError):
    pass


class AuthError(UnilearnError):
    pass


class ConfigError(UnilearnError):
    pass
