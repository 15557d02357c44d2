"""Exception types shared across the package."""

from __future__ import annotations

import numpy as np


class ConditioningError(np.linalg.LinAlgError):
    """Cholesky failed even after the maximum diagonal jitter."""


class SamplerCapError(RuntimeError):
    """A sampler exhausted its proposal budget without producing a member."""


class ConfigError(ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")


class OracleError(RuntimeError):
    """The score oracle raised; the data gathered so far is attached."""

    def __init__(self, message: str, partial):
        super().__init__(message)
        self.partial = partial
