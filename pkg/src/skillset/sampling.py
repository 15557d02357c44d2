"""
Streaming samplers over a high-probability super-level set.

:class:`RejectionStream` filters uniform proposals. :class:`AdaptiveStream`
keeps a buffer filled by :func:`sample_buffer`, which grows a pool of member
samples from a truncated Gaussian mixture centred on the members found so
far plus uniform re-seeding, and weights every sample by the inverse of the
density it was proposed from so that the final weighted draw is close to
uniform on the set.

Anything with ``members(X) -> bool array``, ``theta_star`` and ``d_theta``
can serve as the set; :class:`PredicateSet` wraps a plain predicate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

from .errors import SamplerCapError

log = logging.getLogger(__name__)

# proposals per round and buffer size; small rounds adapt the variance
# quickly, a large buffer amortises each fill over many draws
DEFAULT_N = 20
DEFAULT_M = 100


@dataclass(frozen=True, eq=False)
class PredicateSet:
    """Set given by a vectorised predicate on ``[0, 1]^d``."""

    predicate: Callable[[np.ndarray], np.ndarray]
    theta_star: np.ndarray
    beta: float = 0.0

    @property
    def d_theta(self) -> int:
        return np.asarray(self.theta_star).shape[0]

    def members(self, thetas) -> np.ndarray:
        return np.asarray(self.predicate(np.atleast_2d(thetas)), dtype=bool)


# ---------------------------------------------------------------------------
# truncated Gaussian mixture on the unit box
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Tgmm:
    """Mixture of axis-aligned truncated normals on ``[0, 1]^d``.

    All components share the per-dimension variance vector.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        v = np.broadcast_to(np.asarray(self.variances, dtype=float), (mu.shape[1],)).copy()
        if w.shape[0] != mu.shape[0]:
            raise ValueError("one weight per component required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be a probability vector")
        if np.any(mu < 0) or np.any(mu > 1):
            raise ValueError("component means must lie in the unit box")
        if np.any(v <= 0):
            raise ValueError("variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", v)

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _bounds(mix: Tgmm):
    sd = np.sqrt(mix.variances)
    a = (0.0 - mix.means) / sd
    b = (1.0 - mix.means) / sd
    return sd, a, b


def sample_tgmm(n: int, mix: Tgmm, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` points: a component by weight, then inverse-CDF per dimension."""
    if n < 1:
        raise ValueError("n must be >= 1")
    comp = rng.choice(len(mix.weights), size=n, p=mix.weights)
    sd, a, b = _bounds(mix)
    lo = special.ndtr(a[comp])
    hi = special.ndtr(b[comp])
    u = lo + (hi - lo) * rng.uniform(size=(n, mix.dim))
    z = np.clip(special.ndtri(u), a[comp], b[comp])
    return np.clip(mix.means[comp] + sd * z, 0.0, 1.0)


def tgmm_log_density(thetas, mix: Tgmm) -> np.ndarray:
    X = np.atleast_2d(np.asarray(thetas, dtype=float))
    sd, a, b = _bounds(mix)
    log_mass = np.log(special.ndtr(b) - special.ndtr(a)).sum(1)  # (K,)
    z = (X[:, None, :] - mix.means[None]) / sd
    log_pdf = (-0.5 * z * z).sum(2) - mix.dim * 0.5 * math.log(2 * math.pi) - np.log(sd).sum()
    with np.errstate(divide="ignore"):
        log_w = np.log(mix.weights)
    return special.logsumexp(log_w[None] + log_pdf - log_mass[None], axis=1)


def tgmm_density(theta, mix: Tgmm) -> float:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if np.any(theta < 0) or np.any(theta > 1):
        raise ValueError("density is only defined on the unit box")
    return float(np.exp(tgmm_log_density(theta[None], mix)[0]))


# ---------------------------------------------------------------------------
# buffer construction
# ---------------------------------------------------------------------------


@dataclass
class BufferResult:
    samples: np.ndarray
    weights: np.ndarray
    rounds: int
    calls: int
    accepted: int
    variance_history: list[np.ndarray] = field(default_factory=list)
    log_weights: np.ndarray | None = None  # raw importance weights of the whole pool
    sources: np.ndarray | None = None  # 0 init, 1 uniform, 2 mixture
    capped: bool = False


def weighted_sample_without_replacement(log_w: np.ndarray, m: int, rng) -> np.ndarray:
    """Indices of ``m`` draws without replacement, in draw order (Gumbel top-k)."""
    keys = log_w + rng.gumbel(size=log_w.shape[0])
    return np.argsort(-keys, kind="stable")[:m]


def sample_buffer(
    sset,
    init,
    n: int = DEFAULT_N,
    m: int = DEFAULT_M,
    rng: np.random.Generator | int | None = None,
    max_rounds: int = 1000,
    init_variance: float = 1.0,
) -> BufferResult:
    """Grow a pool of members of ``sset`` and return ``m`` of them by weight.

    Every round proposes ``n`` points from the mixture over the pool and ``n``
    uniform points, keeps the members, and weights them by ``1 / density``
    (mixture) or the box volume (uniform). The shared variance halves when
    fewer than half of the mixture proposals are accepted and doubles
    otherwise. Once the pool holds more than ``m`` points, ``m`` are drawn
    without replacement with probability proportional to weight.

    If ``max_rounds`` pass first the result is padded with copies of
    ``sset.theta_star`` and flagged ``capped``.
    """
    if n < 2 or m < 1:
        raise ValueError("need n >= 2 and m >= 1")
    rng = np.random.default_rng(rng)
    pool = np.atleast_2d(np.asarray(init, dtype=float))
    if pool.shape[0] == 0:
        raise ValueError("init must be non-empty")
    d = pool.shape[1]
    log_w = np.zeros(pool.shape[0])
    sources = np.zeros(pool.shape[0], dtype=int)
    v = np.full(d, float(init_variance))
    history = [v.copy()]
    calls = accepted = 0
    log_vol = 0.0  # log Vol([0, 1]^d)

    for rounds in range(1, max_rounds + 1):
        mix = Tgmm(np.exp(log_w - special.logsumexp(log_w)), pool, v)
        prop = sample_tgmm(n, mix, rng)
        keep = sset.members(prop)
        calls += n
        acc_mix = prop[keep]
        lw_mix = -tgmm_log_density(acc_mix, mix) if len(acc_mix) else np.zeros(0)
        v = v / 2.0 if keep.sum() < n / 2.0 else v * 2.0
        history.append(v.copy())

        unif = rng.uniform(size=(n, d))
        keep_u = sset.members(unif)
        calls += n
        acc_u = unif[keep_u]
        accepted += len(acc_mix) + len(acc_u)

        pool = np.vstack([pool, acc_u, acc_mix])
        log_w = np.concatenate([log_w, np.full(len(acc_u), log_vol), lw_mix])
        sources = np.concatenate([sources, np.ones(len(acc_u), int), np.full(len(acc_mix), 2)])
        if pool.shape[0] > m:
            idx = weighted_sample_without_replacement(log_w, m, rng)
            w = np.exp(log_w[idx] - special.logsumexp(log_w[idx]))
            return BufferResult(pool[idx], w, rounds, calls, accepted, history, log_w, sources)

    log.warning("sample_buffer hit the round cap (%d) with %d samples", max_rounds, pool.shape[0])
    idx = weighted_sample_without_replacement(log_w, min(m, pool.shape[0]), rng)
    pad = np.repeat(np.asarray(sset.theta_star, dtype=float)[None], m - len(idx), axis=0)
    samples = np.vstack([pool[idx], pad])
    w = np.full(m, 1.0 / m)
    return BufferResult(samples, w, max_rounds, calls, accepted, history, log_w, sources, capped=True)


# ---------------------------------------------------------------------------
# streams
# ---------------------------------------------------------------------------


class RejectionStream:
    """Uniform proposals filtered by membership, one member per draw.

    ``calls`` counts proposals consumed, exactly as if they were tested one
    at a time; a draw needing more than ``max_proposals`` raises
    :class:`SamplerCapError`.
    """

    def __init__(self, sset, rng=None, max_proposals: int = 10**6, batch: int = 512):
        self.set = sset
        self.rng = np.random.default_rng(rng)
        self.max_proposals = int(max_proposals)
        self.batch = batch
        self.calls = 0
        self.capped = False
        self._props = np.zeros((0, sset.d_theta))
        self._keep = np.zeros(0, dtype=bool)
        self._pos = 0

    def __iter__(self):
        return self

    def __next__(self) -> np.ndarray:
        return self.draw()

    def draw(self) -> np.ndarray:
        used = 0
        while used < self.max_proposals:
            if self._pos >= len(self._keep):
                self._props = self.rng.uniform(size=(self.batch, self.set.d_theta))
                self._keep = self.set.members(self._props)
                self._pos = 0
            hits = np.flatnonzero(self._keep[self._pos:])
            budget = self.max_proposals - used
            if hits.size and hits[0] < budget:
                step = int(hits[0]) + 1
                theta = self._props[self._pos + step - 1].copy()
                self._pos += step
                self.calls += step
                return theta
            step = min(len(self._keep) - self._pos, budget)
            used += step
            self.calls += step
            self._pos += step
        self.capped = True
        raise SamplerCapError(f"no member within {self.max_proposals} uniform proposals; the set may be empty")

    def take(self, k: int) -> np.ndarray:
        return np.array([self.draw() for _ in range(k)])


class AdaptiveStream:
    """Endless stream refilled from :func:`sample_buffer` seeded at ``theta_star``.

    The buffer is replaced by a fresh fill whenever fewer than ``m / 2``
    samples remain, and the front element is yielded each time.
    """

    def __init__(self, sset, n: int = DEFAULT_N, m: int = DEFAULT_M, rng=None, max_rounds: int = 1000):
        self.set = sset
        self.n, self.m = n, m
        self.rng = np.random.default_rng(rng)
        self.max_rounds = max_rounds
        self.buffer: list[np.ndarray] = []
        self.calls = 0
        self.fills = 0
        self.capped = False
        self.last_fill: BufferResult | None = None

    def __iter__(self):
        return self

    def __next__(self) -> np.ndarray:
        return self.draw()

    def _refill(self):
        res = sample_buffer(self.set, [self.set.theta_star], self.n, self.m, self.rng, self.max_rounds)
        self.buffer = list(res.samples)
        self.calls += res.calls
        self.fills += 1
        self.capped = self.capped or res.capped
        self.last_fill = res

    def draw(self) -> np.ndarray:
        if len(self.buffer) < self.m / 2:
            self._refill()
        return self.buffer.pop(0)

    def take(self, k: int) -> np.ndarray:
        return np.array([self.draw() for _ in range(k)])
