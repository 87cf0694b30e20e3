"""Gradient-flow numerics for mobility-driven drift-diffusion equations."""

__version__ = "0.1.0"


class NumericalError(RuntimeError):
    """Numerical failure: blow-up, positivity loss, or non-convergence."""
