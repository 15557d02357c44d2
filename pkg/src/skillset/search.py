"""Maximisation of a black-box score over the unit box.

Used both for the straddle acquisition and for the most-confident-point
search. A uniform candidate set is scored in one batch; optionally the
best few candidates are then improved by a batched, shrinking-radius
local random search, which copes with the kinks of ``|mu|`` and with the
non-smooth arcsine kernel better than gradient steps would.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class SearchConfig:
    n_candidates: int = 1000
    refine_top_k: int = 0
    refine_iters: int = 25
    refine_batch: int = 16
    refine_step: float = 0.1

    def __post_init__(self):
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")


def maximize_on_box(
    fn: Callable[[np.ndarray], np.ndarray],
    dim: int,
    cfg: SearchConfig,
    rng: np.random.Generator,
    extra: np.ndarray | None = None,
) -> tuple[np.ndarray, float]:
    """Return ``(argmax, max)`` of ``fn`` over ``[0, 1]^dim``.

    ``fn`` maps an ``(N, dim)`` array to ``N`` scores. Ties go to the lowest
    candidate index; refinement only accepts strict improvements, so the
    returned score is at least that of every evaluated candidate.
    """
    cand = rng.uniform(size=(cfg.n_candidates, dim))
    if extra is not None and len(extra):
        cand = np.vstack([cand, np.clip(np.asarray(extra, dtype=float).reshape(-1, dim), 0, 1)])
    vals = np.asarray(fn(cand), dtype=float)
    vals = np.where(np.isnan(vals), -np.inf, vals)
    best = int(np.argmax(vals))
    best_x, best_v = cand[best].copy(), float(vals[best])
    if cfg.refine_top_k <= 0:
        return best_x, best_v

    k = min(cfg.refine_top_k, len(cand))
    # stable ordering so equal scores keep index order
    top = np.argsort(-vals, kind="stable")[:k]
    xs = cand[top].copy()
    vs = vals[top].copy()
    step = np.full(k, cfg.refine_step)
    for _ in range(cfg.refine_iters):
        prop = xs[:, None, :] + step[:, None, None] * rng.standard_normal((k, cfg.refine_batch, dim))
        prop = np.clip(prop, 0.0, 1.0)
        pv = np.asarray(fn(prop.reshape(-1, dim)), dtype=float).reshape(k, cfg.refine_batch)
        pv = np.where(np.isnan(pv), -np.inf, pv)
        j = np.argmax(pv, axis=1)
        cand_v = pv[np.arange(k), j]
        improved = cand_v > vs
        xs[improved] = prop[np.arange(k), j][improved]
        vs[improved] = cand_v[improved]
        step = np.where(improved, step, step * 0.5)
    i = int(np.argmax(vs))
    if vs[i] > best_v:
        best_x, best_v = xs[i].copy(), float(vs[i])
    return best_x, best_v
