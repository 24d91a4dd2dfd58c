"""Exception types raised across the package."""


class NavError(Exception):
    """Base class for all package errors."""


class NonSkew(NavError, ValueError):
    """A matrix handed to ``vee3`` is not skew-symmetric within tolerance."""


class NearPiSingularity(NavError, ValueError):
    """A logarithm or inverse Jacobian was requested too close to the pi cut."""


class DegeneratePosition(NavError, ValueError):
    """Central-body gravitation evaluated below the radius floor."""


class DriftExceeded(NavError, RuntimeError):
    """Attitude orthonormality drift exceeded the monitor threshold."""


class InternalMismatch(NavError, AssertionError):
    """Two algebraically equal forms of the same quantity disagree."""


class UnsupportedSpec(NavError, ValueError):
    """Trajectory specification names an unknown or inconsistent family."""


class ParseError(NavError, ValueError):
    """Malformed configuration document."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class ValidationError(NavError, ValueError):
    """Configuration is well formed but violates one or more invariants."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
