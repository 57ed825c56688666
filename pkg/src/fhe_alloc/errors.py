"""Exception types shared across the solver modules."""


class AllocError(Exception):
    """Base class for library errors."""


class InfeasibleError(AllocError):
    """No allocation satisfies the constraints.

    ``constraint`` names the violated constraint (e.g. ``"server_capacity"``)
    and ``device`` the offending device index when one can be identified.
    """

    def __init__(self, message, constraint=None, device=None):
        super().__init__(message)
        self.constraint = constraint
        self.device = device


class InvalidLambdaError(AllocError, ValueError):
    """A polynomial degree lies outside the domain of the fitted forms."""


class FitError(AllocError, ValueError):
    """Least-squares fit is degenerate or violates the expected form."""


class ConfigError(AllocError, ValueError):
    """Malformed scenario, sweep configuration or CSV input."""


class SearchSpaceTooLarge(AllocError):
    """Grid search would exceed the evaluation budget."""
