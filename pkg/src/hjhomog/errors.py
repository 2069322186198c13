"""Exception types shared across the package."""


class HjhgError(Exception):
    """Base class for all package errors."""


class ParameterError(HjhgError, ValueError):
    """A caller-supplied parameter is invalid."""


class FieldFormatError(HjhgError, ValueError):
    """A field file is corrupt or has an unexpected layout."""


class ConfigError(HjhgError, ValueError):
    """An experiment config file failed validation."""


class SolverDivergence(HjhgError, RuntimeError):
    """An iterative solve failed to reach its tolerance.

    Carries the residual history plus an audit of the realized gradient
    against the dissipation cap, so the caller can distinguish a CFL
    breach from a gradient-cap breach.
    """

    def __init__(self, message, residual_history=None, realized_gradient=None,
                 gradient_cap=None):
        super().__init__(message)
        self.residual_history = residual_history
        self.realized_gradient = realized_gradient
        self.gradient_cap = gradient_cap


class OracleError(HjhgError, RuntimeError):
    """A test oracle failed to produce a reference value (infrastructure bug)."""


class BudgetError(HjhgError, RuntimeError):
    """A stochastic routine exhausted its step budget."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class BracketError(HjhgError, ValueError):
    """A bisection bracket does not straddle the target."""


class RangeError(HjhgError, ValueError):
    """A tabulated query fell outside the tabulated range."""
