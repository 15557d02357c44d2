"""
Mock planner, sampler metrics and the two-box kernel-learning experiment.

A :class:`MockTask` hides a downstream constraint from the learner: one of
the two feasible boxes of a :func:`~skillset.benchmarks.two_box_task` is
blocked per instance. :func:`plan_check` tells accepted samples apart from
the two kinds of failure.

:func:`evaluate_sampler` scores a sampler against ground truth: false
positive rate over 50 yields, the cost of those 50 yields, the number of
yields needed for 5 true positives (at most 100), the diversity of those 5
under a fixed reference kernel, and the discounted reward of the first
success.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .active import ActiveLearnConfig, active_learn
from .benchmarks import SyntheticTask, task_oracle, two_box_task
from .diversity import DiverseStream, DiversityKernel, diversity, task_kernel_learning
from .errors import SamplerCapError
from .gp import predict
from .sampling import DEFAULT_M, DEFAULT_N, AdaptiveStream
from .superlevel import build

log = logging.getLogger(__name__)

GAMMA = 0.6
FP_WINDOW = 50
N5_TARGET = 5
N5_CAP = 100


class PlanResult(enum.Enum):
    ACCEPTED = "accepted"
    REJECTED_DOWNSTREAM = "rejected-downstream"
    INFEASIBLE = "infeasible-constraint"


@dataclass(frozen=True, eq=False)
class MockTask:
    """One planning instance: a feasible region plus a hidden blocked box."""

    synthetic: SyntheticTask
    blocked: int
    context: np.ndarray = field(default_factory=lambda: np.zeros(0))
    invalid_penalty: float = -0.1

    def __post_init__(self):
        if self.synthetic.region != "boxes" or self.synthetic.base_centers.shape[0] != 2:
            raise ValueError("mock tasks need a two-box feasible region")
        if self.blocked not in (0, 1):
            raise ValueError("blocked must be 0 or 1")
        object.__setattr__(self, "context", np.asarray(self.context, dtype=float).reshape(-1))

    @property
    def separator(self) -> float:
        """First-coordinate midpoint between the two box centres."""
        c = self.synthetic.centers(self.context)
        return float(0.5 * (c[0, 0] + c[1, 0]))

    def rejected(self, thetas) -> np.ndarray:
        X = np.atleast_2d(np.asarray(thetas, dtype=float))
        c = self.synthetic.centers(self.context)
        left_blocked = (c[self.blocked, 0] < c[1 - self.blocked, 0])
        side = X[:, 0] < self.separator
        return side if left_blocked else ~side

    def satisfiable(self) -> bool:
        free = self.synthetic.centers(self.context)[1 - self.blocked]
        return bool(self.synthetic.true_members(free[None], self.context)[0]
                    and not self.rejected(free[None])[0])


def plan_check(task: MockTask, theta) -> PlanResult:
    theta = np.asarray(theta, dtype=float).reshape(1, -1)
    if not task.synthetic.true_members(theta, task.context)[0]:
        return PlanResult.INFEASIBLE
    if task.rejected(theta)[0]:
        return PlanResult.REJECTED_DOWNSTREAM
    return PlanResult.ACCEPTED


def sample_mock_tasks(synthetic: SyntheticTask, count: int, rng: np.random.Generator,
                      invalid_penalty: float = -0.1) -> list[MockTask]:
    """Instances with a fair coin deciding the blocked box, redrawn until satisfiable."""
    out = []
    while len(out) < count:
        alpha = synthetic.contexts(rng)
        t = MockTask(synthetic, int(rng.integers(2)), alpha, invalid_penalty)
        if t.satisfiable():
            out.append(t)
    return out


def discounted_reward(flags: Sequence[bool], gamma: float = GAMMA) -> float:
    """``sum_n flag_n * gamma**n`` with ``n`` starting at 1."""
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    f = np.asarray(flags, dtype=float)
    return float(np.sum(f * gamma ** np.arange(1, f.size + 1)))


def optimal_two_box_reward(gamma: float = GAMMA, p_block: float = 0.5) -> float:
    """Best achievable reward when each box is blocked with probability ``p_block``.

    Any first sample is rejected with probability ``p_block``; a second
    sample in the other box then always succeeds.
    """
    return (1.0 - p_block) * gamma + p_block * gamma ** 2


# ---------------------------------------------------------------------------
# sampler metrics
# ---------------------------------------------------------------------------


@dataclass
class SamplerMetrics:
    fp_rate: float
    t50_calls: int
    t50_seconds: float
    n5: int
    n5_capped: bool
    diversity5: float  # nan unless 5 positives were found
    reward: float
    capped: bool = False  # a buffer fill or rejection run hit its cap


@dataclass
class MetricSummary:
    per_seed: list[SamplerMetrics]

    def _col(self, name, rows=None):
        rows = self.per_seed if rows is None else rows
        return np.array([getattr(r, name) for r in rows], dtype=float)

    def mean_sd(self, name: str) -> tuple[float, float]:
        rows = self.per_seed
        if name == "diversity5":
            rows = [r for r in rows if not r.n5_capped and not r.capped]
        x = self._col(name, rows)
        if x.size == 0:
            return float("nan"), float("nan")
        return float(x.mean()), float(x.std(ddof=1)) if x.size > 1 else 0.0

    @property
    def n_capped(self) -> int:
        return sum(r.n5_capped or r.capped for r in self.per_seed)

    def table(self) -> dict[str, tuple[float, float]]:
        return {k: self.mean_sd(k) for k in
                ("fp_rate", "t50_calls", "t50_seconds", "n5", "diversity5", "reward")}


REFERENCE_NOISE = 0.1


def run_sampler(stream, alpha, task: SyntheticTask, gamma: float = GAMMA) -> SamplerMetrics:
    """Drive one stream for at most 100 yields and score it against ground truth."""
    ref = DiversityKernel.unit(task.d_theta, REFERENCE_NOISE)
    flags, positives = [], []
    t50_calls, t50_sec = -1, float("nan")
    capped = False
    start = time.perf_counter()
    try:
        while len(flags) < N5_CAP:
            theta = stream.draw()
            ok = bool(task.true_members(theta[None], alpha)[0])
            flags.append(ok)
            if ok and len(positives) < N5_TARGET:
                positives.append(theta)
            if len(flags) == FP_WINDOW:
                t50_calls, t50_sec = int(stream.calls), time.perf_counter() - start
            if len(flags) >= FP_WINDOW and len(positives) >= N5_TARGET:
                break
    except SamplerCapError:
        capped = True
    capped = capped or bool(getattr(stream, "capped", False))
    window = flags[:FP_WINDOW]
    fp = 1.0 - float(np.mean(window)) if window else float("nan")
    n5_capped = len(positives) < N5_TARGET
    n5 = N5_CAP if n5_capped else int(np.flatnonzero(flags)[N5_TARGET - 1]) + 1
    div = float("nan") if n5_capped else diversity(np.array(positives), ref)
    first = np.flatnonzero(flags)
    reward = gamma ** (int(first[0]) + 1) if first.size else 0.0
    return SamplerMetrics(fp, t50_calls, t50_sec, n5, n5_capped, div, reward, capped)


def evaluate_sampler(factory: Callable[[int], tuple[object, np.ndarray]], task: SyntheticTask,
                     seeds: Sequence[int] | int, gamma: float = GAMMA) -> MetricSummary:
    """``factory(seed) -> (stream, alpha)``; one :func:`run_sampler` per seed."""
    if isinstance(seeds, int):
        seeds = range(seeds)
    return MetricSummary([run_sampler(*factory(s), task, gamma) for s in seeds])


# ---------------------------------------------------------------------------
# kernel-learning experiment on the two-box task
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Task1Config:
    seeds: Sequence[int] = tuple(range(10))
    train_tasks: int = 50
    test_tasks: int = 100
    eval_every: int = 10
    epsilon: float = 0.3
    gamma: float = GAMMA
    max_attempts: int = 20
    learn_budget: int = 120
    learn_seed_points: int = 10
    quantile: float = 0.95
    noise_std: float = 0.01
    n: int = DEFAULT_N
    m: int = DEFAULT_M


@dataclass
class CurveRow:
    seed: int
    method: str
    trained: int
    mean_reward: float
    mean_attempts: float
    failures: int
    inverse_length_scales: tuple[float, ...]


@dataclass
class Task1Result:
    rows: list[CurveRow]
    optimum: float

    def curve(self, method: str) -> list[tuple[int, float, float]]:
        """``(trained, mean reward, mean attempts)`` averaged over seeds."""
        out = []
        for k in sorted({r.trained for r in self.rows if r.method == method}):
            sel = [r for r in self.rows if r.method == method and r.trained == k]
            out.append((k, float(np.mean([r.mean_reward for r in sel])),
                        float(np.mean([r.mean_attempts for r in sel]))))
        return out

    def final(self, method: str) -> tuple[float, float]:
        return self.curve(method)[-1][1:]

    def final_scales(self) -> np.ndarray:
        k = max(r.trained for r in self.rows if r.method == "diverse-learned")
        return np.array([r.inverse_length_scales for r in self.rows
                         if r.method == "diverse-learned" and r.trained == k])

    def as_dicts(self) -> list[dict]:
        return [asdict(r) for r in self.rows]


def _attempts(stream, task: MockTask, cap: int) -> int:
    for i in range(1, cap + 1):
        if plan_check(task, stream.draw()) is PlanResult.ACCEPTED:
            return i
    return cap + 1


def _evaluate_tests(make_stream, tests: list[MockTask], test_seeds, cfg: Task1Config):
    rewards, attempts = [], []
    for t, s in zip(tests, test_seeds):
        a = _attempts(make_stream(np.random.default_rng(s)), t, cfg.max_attempts)
        attempts.append(a)
        rewards.append(cfg.gamma ** a if a <= cfg.max_attempts else 0.0)
    fails = sum(a > cfg.max_attempts for a in attempts)
    return float(np.mean(rewards)), float(np.mean(attempts)), fails


def task1_seed(seed: int, cfg: Task1Config) -> list[CurveRow]:
    """Whole two-box experiment for one root seed."""
    ss = np.random.SeedSequence(seed)
    s_learn, s_train, s_tests, s_sampler = ss.spawn(4)
    synth = two_box_task(2, 0, cfg.noise_std, seed)
    lcfg = ActiveLearnConfig(2, 0, n_seed=cfg.learn_seed_points, restarts=2, refit_every=5)
    rng = np.random.default_rng(s_learn)
    run = active_learn(task_oracle(synth), None, cfg.learn_budget, lcfg, rng)
    sset = build(run.model(), np.zeros(0), 2, cfg.quantile, rng)

    test_rng = np.random.default_rng(s_tests)
    tests = sample_mock_tasks(synth, cfg.test_tasks, test_rng)
    # common random numbers: every method sees the same generator per test task
    test_seeds = s_tests.spawn(cfg.test_tasks)

    fixed = DiversityKernel.unit(2)
    rows = []

    def diverse(kernel):
        return lambda r: DiverseStream(sset, kernel, cfg.n, cfg.m, r)

    rw, at, fl = _evaluate_tests(lambda r: AdaptiveStream(sset, cfg.n, cfg.m, r), tests, test_seeds, cfg)
    rows.append(CurveRow(seed, "adaptive", 0, rw, at, fl, ()))
    rw, at, fl = _evaluate_tests(diverse(fixed), tests, test_seeds, cfg)
    rows.append(CurveRow(seed, "diverse-fixed", 0, rw, at, fl, fixed.inverse_length_scales))
    rows.append(CurveRow(seed, "diverse-learned", 0, rw, at, fl, fixed.inverse_length_scales))

    train_rng = np.random.default_rng(s_train)
    train = sample_mock_tasks(synth, cfg.train_tasks, train_rng)
    kernel, done = fixed, 0
    while done < cfg.train_tasks:
        block = train[done:done + cfg.eval_every]
        kernel, recs = task_kernel_learning(
            block, lambda t, th: plan_check(t, th) is PlanResult.ACCEPTED, lambda t: sset, kernel,
            cfg.epsilon, train_rng, cfg.max_attempts, cfg.n, cfg.m)
        done += len(block)
        rw, at, fl = _evaluate_tests(diverse(kernel), tests, test_seeds, cfg)
        rows.append(CurveRow(seed, "diverse-learned", done, rw, at, fl, kernel.inverse_length_scales))
        log.info("seed %d after %d tasks: l=%s J=%.3f attempts=%.2f", seed, done,
                 np.round(kernel.l, 4), rw, at)
    return rows


def run_task1_experiment(cfg: Task1Config = Task1Config(), jobs: int = 1) -> Task1Result:
    seeds = list(cfg.seeds)
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as ex:
            parts = list(ex.map(task1_seed, seeds, [cfg] * len(seeds)))
    else:
        parts = [task1_seed(s, cfg) for s in seeds]
    rows = [r for p in parts for r in p]
    return Task1Result(rows, optimal_two_box_reward(cfg.gamma))


# ---------------------------------------------------------------------------
# level-set classification quality
# ---------------------------------------------------------------------------


def membership_f1(model, task: SyntheticTask, n_test: int = 2000,
                  rng: np.random.Generator | int | None = 0) -> float:
    """F1 of the sign of the posterior mean against ground truth on uniform points."""
    rng = np.random.default_rng(rng)
    thetas = rng.uniform(size=(n_test, task.d_theta))
    alphas = rng.uniform(size=(n_test, task.d_alpha))
    mean, _ = predict(model, np.hstack([thetas, alphas]))
    pred = mean > 0
    truth = np.array([task.true_members(t[None], a)[0] for t, a in zip(thetas, alphas)])
    tp = np.sum(pred & truth)
    denom = 2 * tp + np.sum(pred & ~truth) + np.sum(~pred & truth)
    return float(2 * tp / denom) if denom else 1.0
