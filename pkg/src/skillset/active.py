"""
Straddle active learning of a score function's zero level set.

The acquisition ``-|mu| + 1.96 sigma`` prefers controls whose sign is still
uncertain. :func:`active_learn` runs the sequential loop (contexts drawn from
a context source, controls chosen by the acquisition, hyperparameters refit
on a configurable cadence); :func:`active_learn_pool` is the discrete variant
that ranks a pre-labelled pool and extracts without replacement.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import OracleError
from .gp import Dataset, GpModel, HyperFit, KernelSpec, fit_hyperparameters, posterior, predict
from .search import SearchConfig, maximize_on_box
from .superlevel import joint_inputs

log = logging.getLogger(__name__)

STRADDLE_WIDTH = 1.96


def straddle(mean, std):
    """``-|mean| + 1.96 std``; works elementwise on arrays."""
    return -np.abs(mean) + STRADDLE_WIDTH * np.asarray(std)


@dataclass(frozen=True)
class AcquisitionQuery:
    context: np.ndarray
    d_theta: int
    candidate_count: int = 1000

    def __post_init__(self):
        if self.candidate_count < 1:
            raise ValueError("candidate_count must be >= 1")
        object.__setattr__(self, "context", np.asarray(self.context, dtype=float).reshape(-1))


def acquisition(model: GpModel, thetas, alpha) -> np.ndarray:
    mean, var = predict(model, joint_inputs(thetas, alpha))
    return straddle(mean, np.sqrt(var))


def select_next(
    model: GpModel,
    query: AcquisitionQuery,
    rng: np.random.Generator | int | None = None,
    refine_top_k: int = 5,
) -> np.ndarray:
    """Control in ``[0, 1]^d_theta`` maximising the straddle score for the context."""
    rng = np.random.default_rng(rng)
    if query.d_theta + query.context.size != model.dim:
        raise ValueError("query dimensions do not match the model")
    cfg = SearchConfig(n_candidates=query.candidate_count, refine_top_k=refine_top_k)
    theta, _ = maximize_on_box(lambda X: acquisition(model, X, query.context),
                               query.d_theta, cfg, rng)
    return theta


# ---------------------------------------------------------------------------
# sequential loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ActiveLearnConfig:
    d_theta: int
    d_alpha: int
    kernel: str = "se"
    strategy: str = "straddle"  # or "random"
    n_seed: int = 5
    restarts: int = 2
    refit_every: int = 1
    candidate_count: int = 1000
    refine_top_k: int = 5
    context_schedule: str = "iid"  # or "round_robin"
    prior_mean: float | str = "fit"  # a constant, or "fit" to choose it by evidence

    def __post_init__(self):
        if self.strategy not in ("straddle", "random"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.refit_every < 1:
            raise ValueError("refit_every must be >= 1")
        if self.context_schedule not in ("iid", "round_robin"):
            raise ValueError(f"unknown context schedule {self.context_schedule!r}")


@dataclass
class StepRecord:
    step: int
    theta: np.ndarray
    alpha: np.ndarray
    y: float
    psi: float
    lml: float


@dataclass
class ActiveRun:
    data: Dataset
    fit: HyperFit | None
    steps: list[StepRecord] = field(default_factory=list)

    def model(self) -> GpModel:
        return model_from_fit(self.data, self.fit)


def model_from_fit(data: Dataset, fit: HyperFit | None, kind: str = "se") -> GpModel:
    if fit is None:
        return posterior(data.with_noise(max(data.noise_std, 0.1)),
                         KernelSpec.default(kind, data.dim))
    return fit.model(data)


def _context_fn(contexts, d_alpha: int, schedule: str):
    if d_alpha == 0:
        return lambda t, rng: np.zeros(0)
    if callable(contexts):
        return lambda t, rng: np.asarray(contexts(rng), dtype=float).reshape(-1)
    table = np.atleast_2d(np.asarray(contexts, dtype=float))
    if schedule == "round_robin":
        return lambda t, rng: table[t % len(table)]
    return lambda t, rng: table[rng.integers(len(table))]


def active_learn(
    oracle: Callable[[np.ndarray, np.ndarray], float],
    contexts: Callable[[np.random.Generator], np.ndarray] | Sequence,
    budget: int,
    cfg: ActiveLearnConfig,
    rng: np.random.Generator | int | None = None,
    seed_data: Dataset | None = None,
    final_restarts: int | None = None,
) -> ActiveRun:
    """Gather ``budget`` evaluations of ``oracle`` after a random seed set.

    ``contexts`` is either a callable drawing a context from a generator or
    a finite table of contexts (iid draws or round robin per
    ``cfg.context_schedule``). With ``cfg.strategy == "random"`` the controls
    are uniform and the GP is only fitted once at the end.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    rng = np.random.default_rng(rng)
    next_context = _context_fn(contexts, cfg.d_alpha, cfg.context_schedule)
    dim = cfg.d_theta + cfg.d_alpha

    def evaluate(data, theta, alpha):
        try:
            y = float(oracle(theta, alpha))
        except Exception as exc:
            raise OracleError(f"oracle failed at theta={theta}, alpha={alpha}: {exc}", data) from exc
        if not np.isfinite(y):
            raise OracleError(f"oracle returned non-finite score {y}", data)
        return data.append(np.concatenate([theta, alpha]), y)

    if seed_data is None:
        data = Dataset.empty(dim)
        for t in range(cfg.n_seed):
            data = evaluate(data, rng.uniform(size=cfg.d_theta), next_context(t, rng))
    else:
        data = seed_data
    if budget == 0:
        fit = _refit(data, cfg, rng, None, final_restarts)
        return ActiveRun(data, fit)

    fit = _refit(data, cfg, rng, None) if cfg.strategy == "straddle" else None
    steps = []
    for t in range(budget):
        alpha = next_context(t, rng)
        if cfg.strategy == "straddle":
            model = model_from_fit(data, fit, cfg.kernel)
            query = AcquisitionQuery(alpha, cfg.d_theta, cfg.candidate_count)
            theta = select_next(model, query, rng, cfg.refine_top_k)
            psi = float(acquisition(model, theta[None, :], alpha)[0])
        else:
            theta, psi = rng.uniform(size=cfg.d_theta), float("nan")
        data = evaluate(data, theta, alpha)
        if cfg.strategy == "straddle" and (t + 1) % cfg.refit_every == 0:
            fit = _refit(data, cfg, rng, fit)
        steps.append(StepRecord(t, theta, alpha, float(data.values[-1]), psi,
                                fit.lml if fit is not None else float("nan")))
        log.debug("step %d theta=%s y=%.4f psi=%.4f", t, theta, data.values[-1], psi)
    fit = _refit(data, cfg, rng, fit, final_restarts)
    return ActiveRun(data, fit, steps)


def _refit(data: Dataset, cfg: ActiveLearnConfig, rng, previous: HyperFit | None,
           restarts: int | None = None) -> HyperFit | None:
    if len(data) < 2:
        return previous
    n = cfg.restarts if restarts is None else restarts
    return fit_hyperparameters(data, cfg.kernel, restarts=n, rng=rng, init=previous,
                               mean=cfg.prior_mean)


# ---------------------------------------------------------------------------
# pool-based variant
# ---------------------------------------------------------------------------


def active_learn_pool(
    pool: Dataset,
    budget: int,
    kernel: KernelSpec | str = "se",
    rng: np.random.Generator | int | None = None,
    restarts: int = 1,
    refit_every: int = 1,
) -> list[int]:
    """Order in which straddle extracts pool rows, without replacement.

    With a :class:`KernelSpec` the hyperparameters stay fixed (noise from
    ``pool.noise_std``); with a kernel name they are refit on the selected
    rows every ``refit_every`` picks once two rows are available.
    """
    n = len(pool)
    if n == 0:
        raise ValueError("empty pool")
    if not 0 <= budget <= n:
        raise ValueError(f"budget {budget} outside [0, {n}]")
    rng = np.random.default_rng(rng)
    fixed = isinstance(kernel, KernelSpec)
    kind = kernel.kind if fixed else kernel
    spec = kernel if fixed else KernelSpec.default(kind, pool.dim)
    noise = pool.noise_std if fixed else max(pool.noise_std, 0.1)
    fit: HyperFit | None = None

    remaining = np.ones(n, dtype=bool)
    order: list[int] = []
    for step in range(budget):
        idx = np.flatnonzero(remaining)
        if idx.size == 0:
            raise ValueError("pool exhausted before the budget was spent")
        chosen = Dataset(pool.points[order], pool.values[order], noise) if order else Dataset.empty(pool.dim, noise)
        if fit is not None:
            model = fit.model(chosen)
        else:
            model = posterior(chosen, spec)
        mean, var = predict(model, pool.points[idx])
        scores = straddle(mean, np.sqrt(var))
        pick = int(idx[int(np.argmax(scores))])
        order.append(pick)
        remaining[pick] = False
        if not fixed and len(order) >= 2 and len(order) % refit_every == 0:
            sub = Dataset(pool.points[order], pool.values[order], noise)
            fit = fit_hyperparameters(sub, kind, restarts=restarts, rng=rng, init=fit)
    return order
