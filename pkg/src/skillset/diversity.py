"""
Diversity-aware sampling and task-level kernel learning.

Diversity of a set ``S`` is ``log det(Xi / zeta**2 + I)`` for a unit-variance
squared-exponential kernel ``xi`` with per-dimension inverse length-scales.
Adding ``theta`` raises it by ``log(1 + eta_S(theta) / zeta**2)``, where
``eta_S`` is the GP posterior variance at ``theta`` given noisy observations
at ``S``, so greedy selection only needs ``eta``.

When the planner rejects a sample, the dimension whose one-dimensional
conditional variance made the sample look most novel has its inverse
length-scale shrunk, so that the kernel stops rewarding spread along it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Callable, Iterable

import numpy as np
from scipy import linalg as sla

from .sampling import DEFAULT_M, DEFAULT_N, sample_buffer

log = logging.getLogger(__name__)

LENGTH_FLOOR = 1e-3


@dataclass(frozen=True)
class DiversityKernel:
    inverse_length_scales: tuple[float, ...]
    noise: float = 0.1

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.inverse_length_scales))
        if any(v < 0 for v in ls):
            raise ValueError("inverse length-scales must be >= 0")
        if not self.noise > 0:
            raise ValueError("diversity noise must be positive")
        object.__setattr__(self, "inverse_length_scales", ls)

    @classmethod
    def unit(cls, dim: int, noise: float = 0.1) -> "DiversityKernel":
        return cls((1.0,) * dim, noise)

    @property
    def l(self) -> np.ndarray:
        return np.asarray(self.inverse_length_scales)

    def gram(self, X, Y=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float)) * self.l
        Y = X if Y is None else np.atleast_2d(np.asarray(Y, dtype=float)) * self.l
        d = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * X @ Y.T
        return np.exp(-np.maximum(d, 0.0))

    def per_dim(self, x: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """``(n_dims, |Y|)`` one-dimensional kernel values between ``x`` and rows of ``Y``."""
        return np.exp(-((self.l[:, None] * (x[:, None] - Y.T)) ** 2))


def diversity(S, kernel: DiversityKernel) -> float:
    """``log det(Xi^S / zeta**2 + I)``; zero for an empty set."""
    S = np.asarray(S, dtype=float)
    if S.size == 0:
        return 0.0
    S = np.atleast_2d(S)
    A = kernel.gram(S) / kernel.noise ** 2 + np.eye(S.shape[0])
    L = np.linalg.cholesky(A)
    return float(2.0 * np.log(np.diag(L)).sum())


class SelectionHistory:
    """Ordered chosen samples with a lazily refreshed Gram factorisation."""

    def __init__(self, kernel: DiversityKernel, chosen: Iterable = ()):
        self.kernel = kernel
        self.chosen: list[np.ndarray] = [np.asarray(c, dtype=float) for c in chosen]
        self.factorizations = 0
        self._factor = None

    def __len__(self) -> int:
        return len(self.chosen)

    def append(self, theta) -> None:
        self.chosen.append(np.asarray(theta, dtype=float))
        self._factor = None

    def set_kernel(self, kernel: DiversityKernel) -> None:
        self.kernel = kernel
        self._factor = None

    @property
    def points(self) -> np.ndarray:
        return np.array(self.chosen)

    def factor(self):
        if self._factor is None:
            A = self.kernel.gram(self.points)
            A[np.diag_indices_from(A)] += self.kernel.noise ** 2
            self._factor = sla.cho_factor(A, lower=True)
            self.factorizations += 1
        return self._factor

    def eta(self, X) -> np.ndarray:
        """Conditional variance for each row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not self.chosen:
            return np.ones(X.shape[0])
        k = self.kernel.gram(self.points, X)
        return 1.0 - np.einsum("ij,ij->j", k, sla.cho_solve(self.factor(), k))

    def feature_importances(self, theta) -> np.ndarray:
        """One-dimensional conditional variances for every dimension at once."""
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if not self.chosen:
            return np.ones(theta.shape[0])
        k = self.kernel.per_dim(theta, self.points)  # (d, |S|)
        sol = sla.cho_solve(self.factor(), k.T)  # (|S|, d)
        return 1.0 - np.einsum("di,id->d", k, sol)


def eta(history: SelectionHistory, theta, kernel: DiversityKernel | None = None) -> float:
    if kernel is not None and kernel != history.kernel:
        history = SelectionHistory(kernel, history.chosen)
    return float(history.eta(np.asarray(theta, dtype=float)[None])[0])


def feature_importance(history: SelectionHistory, theta, kernel: DiversityKernel | None = None,
                       d: int | None = None):
    if kernel is not None and kernel != history.kernel:
        history = SelectionHistory(kernel, history.chosen)
    tau = history.feature_importances(theta)
    return tau if d is None else float(tau[d])


def kernel_update(kernel: DiversityKernel, history: SelectionHistory, theta_failed,
                  epsilon: float, floor: float = LENGTH_FLOOR) -> tuple[DiversityKernel, int]:
    """Shrink the inverse length-scale of the most important dimension.

    Returns the new kernel and the dimension that was updated.
    """
    if len(history) == 0:
        raise ValueError("kernel update needs at least one earlier sample")
    if not 0 <= epsilon < 1:
        raise ValueError("epsilon must lie in [0, 1)")
    if history.kernel != kernel:
        history = SelectionHistory(kernel, history.chosen)
    tau = history.feature_importances(theta_failed)
    d = int(np.argmax(tau))
    l = list(kernel.inverse_length_scales)
    l[d] = max((1.0 - epsilon) * l[d], min(floor, l[d]))
    return replace(kernel, inverse_length_scales=tuple(l)), d


def greedy_diverse(candidates, k: int, kernel: DiversityKernel, chosen=()) -> list[int]:
    """Indices of ``k`` candidates picked greedily by ``eta`` (ties: lowest index)."""
    cand = np.atleast_2d(np.asarray(candidates, dtype=float))
    hist = SelectionHistory(kernel, chosen)
    free = np.ones(len(cand), dtype=bool)
    picks = []
    for _ in range(min(k, len(cand))):
        scores = np.where(free, hist.eta(cand), -np.inf)
        i = int(np.argmax(scores))
        picks.append(i)
        free[i] = False
        hist.append(cand[i])
    return picks


def best_subset(candidates, k: int, kernel: DiversityKernel) -> tuple[tuple[int, ...], float]:
    """Exhaustive maximiser of diversity over subsets of size at most ``k``."""
    cand = np.atleast_2d(np.asarray(candidates, dtype=float))
    best, best_val = (), 0.0
    for size in range(1, min(k, len(cand)) + 1):
        for idx in combinations(range(len(cand)), size):
            val = diversity(cand[list(idx)], kernel)
            if val > best_val:
                best, best_val = idx, val
    return best, best_val


# ---------------------------------------------------------------------------
# streams and kernel learning
# ---------------------------------------------------------------------------


class DiverseStream:
    """Yields ``(theta, S)`` with ``S`` the samples yielded before ``theta``.

    The first yield is the most confident control. Afterwards the buffer
    (refilled from :func:`sample_buffer` when it drops below ``m / 2``) is
    searched for the element with the largest ``eta`` given ``S``.
    """

    def __init__(self, sset, kernel: DiversityKernel, n: int = DEFAULT_N, m: int = DEFAULT_M,
                 rng=None, max_rounds: int = 1000):
        self.set = sset
        self.n, self.m = n, m
        self.rng = np.random.default_rng(rng)
        self.max_rounds = max_rounds
        self.history = SelectionHistory(kernel)
        self.buffer = np.zeros((0, sset.d_theta))
        self.calls = 0
        self.fills = 0
        self.capped = False
        self._current: np.ndarray | None = None

    @property
    def kernel(self) -> DiversityKernel:
        return self.history.kernel

    def set_kernel(self, kernel: DiversityKernel) -> None:
        self.history.set_kernel(kernel)

    def __iter__(self):
        return self

    def __next__(self) -> tuple[np.ndarray, list[np.ndarray]]:
        if self._current is None:
            self._current = np.asarray(self.set.theta_star, dtype=float).copy()
            return self._current, []
        if len(self.buffer) < self.m / 2:
            res = sample_buffer(self.set, [self.set.theta_star], self.n, self.m, self.rng,
                                self.max_rounds)
            self.buffer = res.samples
            self.calls += res.calls
            self.fills += 1
            self.capped = self.capped or res.capped
        self.history.append(self._current)
        i = int(np.argmax(self.history.eta(self.buffer)))
        self._current = self.buffer[i].copy()
        self.buffer = np.delete(self.buffer, i, axis=0)
        return self._current, list(self.history.chosen)

    def draw(self) -> np.ndarray:
        return next(self)[0]

    def take(self, k: int) -> np.ndarray:
        return np.array([self.draw() for _ in range(k)])


@dataclass
class TaskRecord:
    task: int
    attempts: int
    updates: list[int] = field(default_factory=list)
    solved: bool = False
    inverse_length_scales: tuple[float, ...] = ()


def task_kernel_learning(
    tasks: Iterable,
    planner: Callable[[object, np.ndarray], bool],
    set_for: Callable[[object], object],
    kernel: DiversityKernel,
    epsilon: float = 0.3,
    rng: np.random.Generator | int | None = None,
    max_attempts: int = 50,
    n: int = DEFAULT_N,
    m: int = DEFAULT_M,
) -> tuple[DiversityKernel, list[TaskRecord]]:
    """Adapt the diversity kernel over a sequence of planning tasks.

    For each task a fresh diverse stream is opened on ``set_for(task)``;
    samples are checked with ``planner(task, theta)`` until one is accepted
    or ``max_attempts`` is reached. Every rejected sample drawn after at
    least one earlier sample triggers :func:`kernel_update`. The kernel is
    carried across tasks; the history is not.
    """
    rng = np.random.default_rng(rng)
    records = []
    for t, task in enumerate(tasks):
        stream = DiverseStream(set_for(task), kernel, n, m, rng)
        rec = TaskRecord(t, 0)
        prev = None
        while rec.attempts < max_attempts:
            if prev is not None and len(prev[1]) > 0:
                kernel, d = kernel_update(kernel, SelectionHistory(kernel, prev[1]), prev[0], epsilon)
                stream.set_kernel(kernel)
                rec.updates.append(d)
            theta, S = next(stream)
            rec.attempts += 1
            if planner(task, theta):
                rec.solved = True
                break
            prev = (theta, S)
        if not rec.solved:
            log.info("task %d unsolved after %d attempts", t, rec.attempts)
        rec.inverse_length_scales = kernel.inverse_length_scales
        records.append(rec)
    return kernel, records
