"""Control-parameter box and the min-max map to raw units."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ParameterSpace:
    """Axis-aligned box of raw parameter values.

    Learners and samplers work on the normalised unit box ``[0, 1]^d``;
    :meth:`denormalize` maps back to raw units.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi):
            raise ValueError("lower and upper bounds differ in length")
        if any(h <= l for l, h in zip(lo, hi)):
            raise ValueError("every upper bound must exceed its lower bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, dim: int) -> "ParameterSpace":
        return cls((0.0,) * dim, (1.0,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def volume(self) -> float:
        """Volume of the normalised box, which is always 1."""
        return 1.0

    def normalize(self, raw):
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return (np.asarray(raw, dtype=float) - lo) / (hi - lo)

    def denormalize(self, unit):
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return lo + np.asarray(unit, dtype=float) * (hi - lo)

    def contains(self, unit, tol: float = 0.0) -> bool:
        u = np.asarray(unit, dtype=float)
        return bool(np.all(u >= -tol) and np.all(u <= 1.0 + tol))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(size=(n, self.dim))
