"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid model or experiment parameters."""


class InstabilityError(ValueError):
    """Long-run quantity requested for a load with lambda >= mu."""


class DimensionError(ValueError):
    """Operands built for different neighbor counts."""


class StateSpaceTooLarge(ValueError):
    """Enumeration guard exceeded."""


class StructuralError(RuntimeError):
    """Generator is reducible or the linear solve broke down."""


class ConvergenceError(RuntimeError):
    """An iterative procedure ran out of budget.

    The last residual is kept on the instance for diagnostics.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class SymmetryError(ValueError):
    """A law expected to be exchangeable across coordinates is not."""
