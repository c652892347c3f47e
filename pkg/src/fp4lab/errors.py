"""Exception types shared across the package.

The CLI maps each type to a distinct exit status (see experiments.cli).
"""


class ConfigError(ValueError):
    """A config value is missing, malformed, or violates an invariant."""


class DataError(ValueError):
    """Input data is unusable (missing corpus, bad tensor contents, ...)."""


class UnknownExperimentError(ValueError):
    """The requested experiment name is not in the dispatch table."""


class NumericsError(ArithmeticError):
    """A primitive produced a non-finite value, or a loss diverged."""
