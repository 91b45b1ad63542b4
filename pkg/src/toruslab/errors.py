"""Exception types shared across the package."""


class ToruslabError(Exception):
    """Base class for all package-specific errors."""


class DomainError(ToruslabError, ValueError):
    """Input outside an operation's mathematical domain (non-finite, e <= 0, ...)."""


class ConstructionError(ToruslabError, ValueError):
    """A type invariant was violated at construction (definiteness, positivity, ...)."""


class IntegrationError(ToruslabError):
    """Fixed-point iteration of the implicit step failed to converge.

    Carries the time at which the step was attempted.
    """

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class DomainExitError(ToruslabError):
    """An orbit left the configured section domain (crossing speed fell below alpha/2)."""


class ShellSolveError(ToruslabError):
    """The on-shell Newton solve found no root on the requested branch."""


class NoOrbitError(ToruslabError):
    """Periodic-orbit Newton refinement diverged or the guess was out of basin."""


class DegenerateMonodromyError(ToruslabError):
    """Trivial eigenvalue pair of a monodromy matrix could not be identified."""


class InsufficientSamplingError(ToruslabError):
    """Too few points or too little coverage to run a graph/circle test."""


class ResourceError(ToruslabError):
    """A configured budget (net cardinality, ...) was exceeded."""


class InstabilityError(ToruslabError):
    """No epsilon rung of a covering table had a stable slope.

    ``slopes`` maps epsilon -> fitted slope for diagnosis.
    """

    def __init__(self, message, slopes=None):
        super().__init__(message)
        self.slopes = dict(slopes or {})


class ConfigError(ToruslabError, ValueError):
    """Invalid scenario configuration (unknown key, bad value, schema violation)."""
