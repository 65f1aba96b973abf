"""Exception types shared across the package and mapped to CLI exit codes."""


class ConfigError(ValueError):
    """Invalid or malformed configuration (exit code 2)."""


class NumericalError(RuntimeError):
    """Numerical failure: eigensolver, quadrature or integrator (exit code 3)."""

    def __init__(self, message, seed=None):
        if seed is not None:
            message = f"{message} (seed {seed})"
        super().__init__(message)
        self.seed = seed


class PreconditionError(RuntimeError):
    """An experiment gate refused to run (exit code 4)."""
