"""Exception types shared across the package."""


class ForgeError(Exception):
    """Base class for all package errors."""


class PreconditionError(ForgeError):
    """Invalid input or configuration (CLI exit code 2)."""


class SolverError(ForgeError):
    """A numerical solve failed to converge (CLI exit code 3)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class BracketError(SolverError):
    """A root bracket with opposite signs could not be established."""
