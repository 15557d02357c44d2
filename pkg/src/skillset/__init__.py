"""Learning where a parameterised skill succeeds and sampling from it."""

__version__ = "0.1.0"
