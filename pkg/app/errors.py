"""Exception types shared across the package."""


class EnvelopeMpcError(RuntimeError):
    """Base class for every error raised on purpose by this package."""


class ModelDomainError(EnvelopeMpcError, ValueError):
    """A model was evaluated outside its domain (e.g. ux below the slip-angle floor)."""


class ConfigurationError(EnvelopeMpcError, ValueError):
    """Invalid parameters, degenerate bounds or malformed input files."""


class ConvergenceError(EnvelopeMpcError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual norm {residual:.3e})")
        self.residual = residual


class PlanningError(EnvelopeMpcError):
    """The envelope planner cannot produce a valid block chain."""
