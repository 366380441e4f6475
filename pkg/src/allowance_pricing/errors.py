"""Error taxonomy shared across the engine.

The CLI maps these onto process exit codes: configuration problems exit 2,
convergence failures exit 3, unattainable-state domain errors exit 4.
"""


class ModelError(ValueError):
    """Invalid model ingredient (non-convex cost, bad noise spec, bad functional)."""


class ConfigurationError(ValueError):
    """Malformed configuration or violated operation precondition."""


class SolverError(RuntimeError):
    """Numerical solve failed structurally (lost bracket, unstable scheme)."""


class ConvergenceError(SolverError):
    """Inner iteration ran out of iterations; carries the residual history."""

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class DomainError(ValueError):
    """Requested state/price lies outside the attainable range."""
