"""
Synthetic score oracles.

A task maps ``(theta, alpha)`` to a latent success fraction in ``[0, 1]``
(1 at the centre of a feasible region whose position depends affinely on the
context, clipped quadratic falloff outside) and then through a score shape.
The falloff is calibrated so that the shape's zero crossing lies exactly on
the region boundary, which makes the true super-level set known in closed
form for evaluation.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

SHAPE_KINDS = ("pour2d", "scoop2d", "push", "piecewise")

# distance from the goal grows by this much per unit of lost fraction
_PUSH_SPREAD = 4.0


@dataclass(frozen=True)
class ScoreShape:
    kind: str
    tau: float = 0.9
    goal: tuple[float, ...] = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown score shape {self.kind!r}")
        if self.kind == "piecewise" and not 0 < self.tau < 1:
            raise ValueError("piecewise threshold must lie in (0, 1)")

    @property
    def crossing(self) -> float:
        """Latent fraction at which the composed score changes sign."""
        return {"pour2d": 0.95, "scoop2d": 0.5, "push": 1.0 - 2.0 / _PUSH_SPREAD,
                "piecewise": self.tau}[self.kind]


def shape_score(shape: ScoreShape, x) -> float:
    """Score of a fraction (or, for ``push``, of a final object position)."""
    if shape.kind == "push":
        x = np.asarray(x, dtype=float).reshape(-1)
        return float(2.0 - np.linalg.norm(x - np.asarray(shape.goal, dtype=float)))
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"fraction {x} outside [0, 1]")
    if shape.kind == "pour2d":
        return math.exp(2.0 * (10.0 * x - 9.5)) - 1.0
    if shape.kind == "scoop2d":
        return x - 0.5
    tau = shape.tau
    if x <= tau:
        return -1.0 + x / tau
    return (x - tau) / (1.0 - tau)


def _shape_vec(shape: ScoreShape, f: np.ndarray) -> np.ndarray:
    if shape.kind == "pour2d":
        return np.exp(2.0 * (10.0 * f - 9.5)) - 1.0
    if shape.kind == "scoop2d":
        return f - 0.5
    if shape.kind == "push":
        return 2.0 - _PUSH_SPREAD * (1.0 - f)
    tau = shape.tau
    return np.where(f <= tau, -1.0 + f / tau, (f - tau) / (1.0 - tau))


def _ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


@dataclass(frozen=True, eq=False)
class SyntheticTask:
    """Analytic feasible region over controls, shifted by the context.

    ``region`` is ``"ellipsoid"`` (semi-axes ``half_widths[0]``) or
    ``"boxes"`` (one entry of ``half_widths`` per box). Region centres are
    ``base_centers + shift @ (alpha - 0.5)``, kept inside the unit box.
    """

    d_theta: int
    d_alpha: int
    shape: ScoreShape
    region: str
    base_centers: np.ndarray
    half_widths: np.ndarray
    shift: np.ndarray
    noise_std: float = 0.01
    seed: int = 0
    name: str = "task"

    def __post_init__(self):
        if self.region not in ("ellipsoid", "boxes"):
            raise ValueError(f"unknown region family {self.region!r}")
        c = np.atleast_2d(np.asarray(self.base_centers, dtype=float))
        h = np.atleast_2d(np.asarray(self.half_widths, dtype=float))
        if c.shape != h.shape or c.shape[1] != self.d_theta:
            raise ValueError("centres and half-widths must be (n_regions, d_theta)")
        object.__setattr__(self, "base_centers", c)
        object.__setattr__(self, "half_widths", h)
        w = np.asarray(self.shift, dtype=float).reshape(self.d_theta, self.d_alpha)
        object.__setattr__(self, "shift", w)

    @property
    def volume(self) -> float:
        """Volume fraction of the unit box occupied by the true feasible set."""
        h = self.half_widths
        if self.region == "ellipsoid":
            return float(_ball_volume(self.d_theta) * np.prod(h[0]))
        return float(np.sum(np.prod(2.0 * h, axis=1)))

    def centers(self, alpha) -> np.ndarray:
        alpha = np.asarray(alpha, dtype=float).reshape(-1)
        if alpha.size != self.d_alpha:
            raise ValueError(f"context has dimension {alpha.size}, task expects {self.d_alpha}")
        off = self.shift @ (alpha - 0.5) if self.d_alpha else np.zeros(self.d_theta)
        return self.base_centers + off

    def scaled_distance(self, thetas, alpha) -> np.ndarray:
        """Normalised distance to the nearest region; < 1 inside the feasible set."""
        X = np.atleast_2d(np.asarray(thetas, dtype=float))
        C = self.centers(alpha)
        if self.region == "ellipsoid":
            return np.sqrt((((X - C[0]) / self.half_widths[0]) ** 2).sum(1))
        q = np.abs(X[:, None, :] - C[None]) / self.half_widths[None]
        return q.max(axis=2).min(axis=1)

    def clean_fraction(self, thetas, alpha) -> np.ndarray:
        q = self.scaled_distance(thetas, alpha)
        return np.clip(1.0 - (1.0 - self.shape.crossing) * q * q, 0.0, 1.0)

    def noise(self, theta, alpha) -> float:
        if self.noise_std == 0:
            return 0.0
        h = hashlib.blake2b(digest_size=16)
        h.update(np.ascontiguousarray(theta, dtype=float).tobytes())
        h.update(np.ascontiguousarray(alpha, dtype=float).tobytes())
        words = np.frombuffer(h.digest(), dtype=np.uint32)
        rng = np.random.default_rng([self.seed, *words.tolist()])
        return float(rng.normal(0.0, self.noise_std))

    def true_members(self, thetas, alpha) -> np.ndarray:
        """Evaluation-only ground truth: noise-free score is positive."""
        return self.scaled_distance(thetas, alpha) < 1.0

    def contexts(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(size=self.d_alpha)


def latent_fraction(task: SyntheticTask, theta, alpha) -> float:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    f = float(task.clean_fraction(theta[None, :], alpha)[0])
    if task.noise_std:
        f = min(max(f + task.noise(theta, alpha), 0.0), 1.0)
    return f


def score(task: SyntheticTask, theta, alpha) -> float:
    f = latent_fraction(task, theta, alpha)
    if task.shape.kind == "push":
        goal = np.asarray(task.shape.goal, dtype=float)
        direction = np.zeros_like(goal)
        direction[0] = 1.0
        return shape_score(task.shape, goal + _PUSH_SPREAD * (1.0 - f) * direction)
    return shape_score(task.shape, f)


def task_oracle(task: SyntheticTask):
    """Score function ``(theta, alpha) -> y`` for learners."""

    def oracle(theta, alpha):
        return score(task, theta, alpha)

    return oracle


def clean_scores(task: SyntheticTask, thetas, alpha) -> np.ndarray:
    return _shape_vec(task.shape, task.clean_fraction(thetas, alpha))


# ---------------------------------------------------------------------------
# factories
# ---------------------------------------------------------------------------


def ellipsoid_task(d_theta: int, d_alpha: int, volume: float, shape: ScoreShape,
                   noise_std: float = 0.01, seed: int = 0, name: str = "ellipsoid") -> SyntheticTask:
    """Ellipsoidal feasible set of the given volume fraction, fully inside the box."""
    rng = np.random.default_rng(seed)
    raw = rng.uniform(0.75, 1.25, size=d_theta)
    # flatten the axis ratios towards a ball until the ellipsoid fits
    for spread in np.linspace(1.0, 0.0, 21):
        ratios = 1.0 + spread * (raw - 1.0)
        axes = ratios * (volume / (_ball_volume(d_theta) * np.prod(ratios))) ** (1.0 / d_theta)
        if np.all(axes < 0.49):
            break
    else:
        raise ValueError(f"volume {volume} too large for an ellipsoid in {d_theta} dimensions")
    room = 0.5 - axes
    centers = 0.5 + rng.uniform(-0.3, 0.3, size=d_theta) * room
    if d_alpha:
        w = rng.uniform(-1.0, 1.0, size=(d_theta, d_alpha))
        w /= np.abs(w).sum(1, keepdims=True)
        # keep |centre - 0.5| + |shift| within the available room
        w *= (room - np.abs(centers - 0.5))[:, None] * 2.0
    else:
        w = np.zeros((d_theta, 0))
    return SyntheticTask(d_theta, d_alpha, shape, "ellipsoid", centers[None], axes[None], w,
                         noise_std, seed, name)


def pour_task(d_theta: int = 4, d_alpha: int = 4, volume: float = 0.1,
              noise_std: float = 0.01, seed: int = 0) -> SyntheticTask:
    return ellipsoid_task(d_theta, d_alpha, volume, ScoreShape("pour2d"), noise_std, seed, "pour")


def scoop_task(d_theta: int = 7, d_alpha: int = 2, volume: float = 0.02,
               noise_std: float = 0.01, seed: int = 0) -> SyntheticTask:
    return ellipsoid_task(d_theta, d_alpha, volume, ScoreShape("scoop2d"), noise_std, seed, "scoop")


def two_box_task(d_theta: int = 2, d_alpha: int = 0, noise_std: float = 0.01, seed: int = 0,
                 boxes: tuple | None = None, shift_scale: float = 0.05) -> SyntheticTask:
    """Push analog: feasible actions fill two boxes of unequal size.

    The first coordinate separates the boxes. The default layout puts a
    tall box on the left and a short one on the right, so that along the
    second coordinate one box spans more than the gap between them.
    """
    if boxes is None:
        lo_c = np.full(d_theta, 0.5)
        lo_h = np.full(d_theta, 0.2)
        hi_c = np.full(d_theta, 0.5)
        hi_h = np.full(d_theta, 0.06)
        lo_c[0], lo_h[0] = 0.22, 0.12
        hi_c[0], hi_h[0] = 0.5, 0.06
        if d_theta > 1:
            lo_h[1] = 0.42
            hi_h[1] = 0.1
        centers, half = np.vstack([lo_c, hi_c]), np.vstack([lo_h, hi_h])
    else:
        centers = np.asarray([b[0] for b in boxes], dtype=float)
        half = np.asarray([b[1] for b in boxes], dtype=float)
    rng = np.random.default_rng(seed)
    w = rng.uniform(-shift_scale, shift_scale, size=(d_theta, d_alpha)) if d_alpha else np.zeros((d_theta, 0))
    shape = ScoreShape("push", goal=(0.0, 0.0))
    return SyntheticTask(d_theta, d_alpha, shape, "boxes", centers, half, w, noise_std, seed, "push")


def push_task(d_theta: int = 4, d_alpha: int = 2, noise_std: float = 0.01, seed: int = 0) -> SyntheticTask:
    return two_box_task(d_theta, d_alpha, noise_std, seed)


TASK_FACTORIES = {"pour": pour_task, "scoop": scoop_task, "push": push_task}
