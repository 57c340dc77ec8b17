"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so solver/parser code should
raise the most specific type that applies rather than bare ValueError.
"""


class PbwosError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(PbwosError):
    """Invalid configuration or argument values (bad constants, bad flags)."""


class PqrParseError(PbwosError):
    """Malformed PQR content.  Carries the 1-based line number when known."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class EmptyMoleculeError(PqrParseError):
    """PQR input contained no ATOM/HETATM records."""

    def __init__(self, message: str = "no atoms found in input"):
        super().__init__(message, lineno=None)


class SingularityError(PbwosError):
    """Evaluation requested at (or too close to) a point charge."""


class NumericalError(PbwosError):
    """A numerical procedure failed to converge or a walk diverged."""


class WalkDivergenceError(NumericalError):
    """A walk exceeded its step cap."""
