"""Exception types shared across the package."""


class DoppsError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(DoppsError, ValueError):
    """Vector or matrix dimensions do not match the expected shape."""


class EmptyColumn(DoppsError, ValueError):
    """A topology column has no out-edges (node cannot push to anyone)."""


class MinWeightInfeasible(DoppsError, ValueError):
    """Equal-split weights would fall below the requested minimum weight."""


class GenerationFailed(DoppsError, RuntimeError):
    """Random generation did not produce a valid object within the retry budget."""


class InfeasibleSet(DoppsError, ValueError):
    """Constraint system admits no feasible point inside its bounding box."""


class NonConvergence(DoppsError, RuntimeError):
    """Iterative routine hit its iteration cap before meeting tolerances.

    Carries diagnostics so callers can inspect how far the iteration got.
    """

    def __init__(self, message, *, iterations=None, residual=None,
                 displacement=None, best=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
        self.displacement = displacement
        self.best = best


class WeightUnderflow(DoppsError, RuntimeError):
    """Push-sum weight fell to ~0; the graph sequence violates its connectivity
    assumptions (the weight is provably bounded away from zero on valid input)."""


class NotDoublyStochastic(DoppsError, ValueError):
    """The balanced-graph baseline requires a doubly stochastic mixing matrix."""


class LengthMismatch(DoppsError, ValueError):
    """Series or trace lengths are inconsistent."""


class NonPositiveValues(DoppsError, ValueError):
    """Log-log rate fitting needs positive values on the fitted window."""


class MissingColumn(DoppsError, ValueError):
    """A CSV input lacks a required column."""


class ConfigError(DoppsError, ValueError):
    """Experiment configuration is missing, malformed, or inconsistent."""
