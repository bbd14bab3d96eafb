"""Exception hierarchy."""


class DiffkitError(Exception):
    """Base class for all diffkit errors."""


class ParseError(DiffkitError):
    """Syntax error in a coefficient expression."""

    def __init__(self, message: str, offset: int, expected=()):
        detail = f"{message} at offset {offset}"
        if expected:
            detail += " (expected: " + ", ".join(sorted(expected)) + ")"
        super().__init__(detail)
        self.offset = offset
        self.expected = frozenset(expected)


class UnknownIdentifierError(ParseError):
    """Identifier that is not `x` or a known function."""

    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r}", offset)
        self.name = name


class EvalDomainError(DiffkitError):
    """Expression evaluation left the real domain (log of non-positive, etc.)."""

    def __init__(self, message: str, subexpr: str, x: float):
        super().__init__(f"{message} in {subexpr!r} at x={x!r}")
        self.subexpr = subexpr
        self.x = x


class InvalidParameterError(DiffkitError):
    """Model family parameter out of range."""


class PreconditionError(DiffkitError):
    """An operation was called outside its stated preconditions."""


class RecurrentDiffusionError(DiffkitError):
    """Zero-potential quantities requested for a recurrent diffusion."""


class NotRecurrentTransformError(DiffkitError):
    """Candidate (h, M) fails the transformed-scale divergence requirement."""


class InconclusiveError(DiffkitError):
    """A quadrature-based verdict could not be decided either way."""


class SolverError(DiffkitError):
    """ODE/PDE solver failure; carries diagnostics."""

    def __init__(self, message: str, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class InstabilityError(SolverError):
    """Time-stepping blow-up; suggests a smaller step."""

    def __init__(self, message: str, suggested_dt: float):
        super().__init__(f"{message}; retry with dt <= {suggested_dt:g}")
        self.suggested_dt = suggested_dt


class SimulationError(DiffkitError):
    """Too many paths hit evaluation errors."""


class ConfigError(DiffkitError):
    """Invalid run configuration."""
