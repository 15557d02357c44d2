"""
Command-line entry point.

    skillset train    --config cfg.json --seed 0 --out runs/a
    skillset sample   --model runs/a/model.json --context 0.2,0.4,0.5,0.5 --sampler diverse --out runs/a
    skillset evaluate --config cfg.json --seed 0 --out runs/eval --jobs 4
    skillset task1    --config cfg.json --seed 0 --out runs/task1
    skillset report   --out runs/eval [--plot]

Data files are deterministic given config and seed; anything involving
wall time goes to ``*.log`` and ``timings.csv`` only.

Exit status: 0 success, 2 invalid config, 3 numerical failure, 4 sampler
cap, 5 oracle failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import io
from .active import ActiveLearnConfig, active_learn
from .benchmarks import pour_task, push_task, scoop_task, task_oracle
from .config import ExperimentConfig, SAMPLERS, load_config
from .diversity import DiverseStream, DiversityKernel, diversity
from .errors import ConditioningError, ConfigError, OracleError, SamplerCapError
from .harness import MetricSummary, Task1Config, membership_f1, run_sampler, run_task1_experiment
from .sampling import AdaptiveStream, RejectionStream
from .superlevel import build

log = logging.getLogger("skillset")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CAP, EXIT_ORACLE = 0, 2, 3, 4, 5


def make_task(tc):
    if tc.kind == "push":
        return push_task(tc.d_theta, tc.d_alpha, tc.noise_std, tc.seed)
    factory = pour_task if tc.kind == "pour" else scoop_task
    try:
        return factory(tc.d_theta, tc.d_alpha, tc.volume, tc.noise_std, tc.seed)
    except ValueError as exc:
        raise ConfigError("task.volume", str(exc)) from None


def learner_config(cfg: ExperimentConfig) -> ActiveLearnConfig:
    lc = cfg.learner
    return ActiveLearnConfig(cfg.task.d_theta, cfg.task.d_alpha, kernel=lc.kernel, strategy=lc.strategy,
                             n_seed=lc.n_seed, restarts=lc.restarts, refit_every=lc.refit_every,
                             context_schedule=lc.context_schedule, prior_mean=lc.prior_mean)


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "strategy", None):
        cfg.learner = replace(cfg.learner, strategy=args.strategy)
    if getattr(args, "sampler", None):
        cfg.sampler = replace(cfg.sampler, kind=args.sampler)
    if getattr(args, "quantile", None) is not None:
        cfg.sampler = replace(cfg.sampler, quantile=args.quantile)
        cfg.evaluate = replace(cfg.evaluate, quantile=args.quantile)
        cfg.task1 = replace(cfg.task1, quantile=args.quantile)
    cfg.check()
    return cfg


def _setup_logging(out: Path, name: str, verbose: bool):
    out.mkdir(parents=True, exist_ok=True)
    root = logging.getLogger("skillset")
    root.handlers.clear()
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    fh = logging.FileHandler(out / f"{name}.log", mode="w")
    fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root.addHandler(fh)
    sh = logging.StreamHandler(sys.stderr)
    sh.setLevel(logging.WARNING)
    sh.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    root.addHandler(sh)


def _train(cfg: ExperimentConfig, seed: int):
    task = make_task(cfg.task)
    rng = np.random.default_rng(seed)
    run = active_learn(task_oracle(task), task.contexts, cfg.learner.budget, learner_config(cfg), rng)
    return task, run


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    h = io.config_hash(cfg.to_dict())
    out = Path(args.out)
    _setup_logging(out, "train", args.verbose)
    start = time.perf_counter()
    task, run = _train(cfg, args.seed)
    log.info("trained on %d points in %.2fs", len(run.data), time.perf_counter() - start)
    d_theta = cfg.task.d_theta
    io.write_dataset(out / "dataset.csv", run.data, d_theta, h, args.seed)
    cols = ["step"] + [f"theta{i}" for i in range(d_theta)] + \
        [f"alpha{i}" for i in range(cfg.task.d_alpha)] + ["y", "psi", "lml"]
    rows = ([s.step, *s.theta, *s.alpha, s.y, s.psi, s.lml] for s in run.steps)
    io.write_table(out / "train_steps.csv", cols, rows, h, args.seed)
    model = run.model()
    doc = io.model_document(model, d_theta, h, args.seed, run.fit.lml if run.fit else None)
    doc["config"] = cfg.to_dict()
    io.write_json(out / "model.json", doc)
    print(f"wrote {out / 'dataset.csv'} ({len(run.data)} rows) and {out / 'model.json'}")
    return EXIT_OK


def _open_stream(kind: str, sset, sc, rng):
    if kind == "rejection":
        return RejectionStream(sset, rng, sc.max_proposals)
    if kind == "adaptive":
        return AdaptiveStream(sset, sc.n, sc.m, rng, sc.max_rounds)
    kernel = DiversityKernel.unit(sset.d_theta, sc.diversity_noise)
    return DiverseStream(sset, kernel, sc.n, sc.m, rng, sc.max_rounds)


def cmd_sample(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    sc = cfg.sampler
    if args.count is not None:
        sc = replace(sc, count=args.count)
    out = Path(args.out)
    _setup_logging(out, "sample", args.verbose)
    model, d_theta, doc = io.load_model(args.model)
    d_alpha = doc["d_alpha"]
    alpha = np.array([float(v) for v in args.context.split(",")]) if args.context else np.zeros(0)
    if alpha.size != d_alpha:
        raise ConfigError("--context", f"expected {d_alpha} values, got {alpha.size}")
    params = {"model": doc["config_hash"], "context": alpha.tolist(), "sampler": sc.__dict__}
    h = io.config_hash(params)
    rng = np.random.default_rng(args.seed)
    sset = build(model, alpha, d_theta, sc.quantile, rng)
    stream = _open_stream(sc.kind, sset, sc, rng)
    ref = DiversityKernel.unit(d_theta, sc.diversity_noise)
    cols = ["index"] + [f"theta{i}" for i in range(d_theta)] + ["phi", "member", "calls"]
    if sc.kind == "diverse":
        cols.append("diversity")
    rows, drawn = [], []
    for i in range(sc.count):
        theta = stream.draw()
        drawn.append(theta)
        row = [i, *theta, float(sset.phi(theta[None])[0]), bool(sset.members(theta[None])[0]),
               int(getattr(stream, "calls", 0))]
        if sc.kind == "diverse":
            row.append(diversity(np.array(drawn), ref))
        rows.append(row)
    io.write_table(out / "samples.csv", cols, rows, h, args.seed,
                   note=f"sampler={sc.kind} beta={sset.beta!r} phi_star={sset.phi_star!r}")
    print(f"wrote {out / 'samples.csv'} ({sc.count} rows)")
    return EXIT_OK


def _evaluate_unit(cfg: ExperimentConfig, model, task, unit_seed: np.random.SeedSequence, methods):
    """All methods on one context; each method gets its own child stream."""
    s_ctx, s_build, *s_methods = unit_seed.spawn(2 + len(methods))
    alpha = task.contexts(np.random.default_rng(s_ctx))
    sset = build(model, alpha, cfg.task.d_theta, cfg.evaluate.quantile, np.random.default_rng(s_build))
    out = {}
    for m, s in zip(methods, s_methods):
        stream = _open_stream(m, sset, cfg.sampler, np.random.default_rng(s))
        out[m] = run_sampler(stream, alpha, task, cfg.evaluate.gamma)
    return out


METRICS = ("fp_rate", "t50_calls", "n5", "diversity5", "reward")


def cmd_evaluate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    h = io.config_hash(cfg.to_dict())
    out = Path(args.out)
    _setup_logging(out, "evaluate", args.verbose)
    task, run = _train(cfg, args.seed)
    model = run.model()
    f1 = membership_f1(model, task, cfg.evaluate.f1_test_points, args.seed + 1)
    methods = list(cfg.evaluate.methods)
    units = np.random.SeedSequence(args.seed).spawn(cfg.evaluate.seeds)
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            results = list(ex.map(_evaluate_unit, [cfg] * len(units), [model] * len(units),
                                  [task] * len(units), units, [methods] * len(units)))
    else:
        results = [_evaluate_unit(cfg, model, task, u, methods) for u in units]

    per_cols = ["unit", "method", "fp_rate", "t50_calls", "n5", "n5_capped", "diversity5", "reward", "capped"]
    per_rows, timing_rows = [], []
    for i, res in enumerate(results):
        for m in methods:
            r = res[m]
            per_rows.append([i, m, r.fp_rate, r.t50_calls, r.n5, r.n5_capped, r.diversity5, r.reward, r.capped])
            timing_rows.append([i, m, r.t50_seconds])
    io.write_table(out / "metrics_per_seed.csv", per_cols, per_rows, h, args.seed)
    io.write_table(out / "timings.csv", ["unit", "method", "t50_seconds"], timing_rows, h, args.seed,
                   note="wall time; machine dependent, not part of the reproducible outputs")

    summary = {}
    rows = [["learner", "f1", f1, 0.0, 1, 0]]
    for m in methods:
        ms = MetricSummary([res[m] for res in results])
        summary[m] = {k: ms.mean_sd(k) for k in METRICS}
        for k in METRICS:
            mu, sd = ms.mean_sd(k)
            rows.append([m, k, mu, sd, len(results), ms.n_capped])
    io.write_table(out / "metrics.csv", ["method", "metric", "mean", "sd", "n", "capped"], rows, h, args.seed)
    # unit i draws from SeedSequence(root).spawn(...)[i]
    doc = {**io.provenance(h, args.seed), "seeds": [[args.seed, i] for i in range(len(units))],
           "config": cfg.to_dict(), "f1": f1, "metrics": summary,
           "partial": any(r[m].capped for r in results for m in methods)}
    io.write_json(out / "metrics.json", doc)
    print(_format_metrics(rows, h, args.seed))
    return EXIT_OK


def _format_metrics(rows, h, seed) -> str:
    lines = [f"config {h}  seed {seed}", f"{'method':<10} {'metric':<11} {'mean':>12} {'sd':>10}"]
    for method, metric, mu, sd, *_ in rows:
        lines.append(f"{method:<10} {metric:<11} {mu:>12.3f} {sd:>10.3f}")
    return "\n".join(lines)


def cmd_task1(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    h = io.config_hash(cfg.to_dict())
    out = Path(args.out)
    _setup_logging(out, "task1", args.verbose)
    t = cfg.task1
    seeds = tuple(args.seed + i for i in range(t.seeds))
    tcfg = Task1Config(seeds=seeds, train_tasks=t.train_tasks, test_tasks=t.test_tasks,
                       eval_every=t.eval_every, epsilon=t.epsilon, gamma=t.gamma,
                       max_attempts=t.max_attempts, learn_budget=t.learn_budget,
                       learn_seed_points=t.learn_seed_points, quantile=t.quantile,
                       noise_std=t.noise_std, n=cfg.sampler.n, m=cfg.sampler.m)
    res = run_task1_experiment(tcfg, args.jobs)
    cols = ["seed", "method", "trained", "mean_reward", "mean_attempts", "failures", "l0", "l1"]
    rows = [[r.seed, r.method, r.trained, r.mean_reward, r.mean_attempts, r.failures,
             *(list(r.inverse_length_scales) or [float("nan"), float("nan")])] for r in res.rows]
    io.write_table(out / "task1_rows.csv", cols, rows, h, args.seed)
    curve_rows = [[m, k, j, a] for m in ("adaptive", "diverse-fixed", "diverse-learned")
                  for k, j, a in res.curve(m)]
    io.write_table(out / "task1_curve.csv", ["method", "trained", "mean_reward", "mean_attempts"],
                   curve_rows, h, args.seed, note=f"optimum={res.optimum!r}")
    io.write_json(out / "task1.json", {**io.provenance(h, args.seed), "seeds": list(seeds),
                                        "config": cfg.to_dict(), "optimum": res.optimum,
                                        "final": {m: res.final(m) for m in
                                                  ("adaptive", "diverse-fixed", "diverse-learned")},
                                        "final_scales": res.final_scales()})
    for m, k, j, a in curve_rows:
        print(f"{m:<16} trained={int(k):>3}  J={j:.3f}  attempts={a:.2f}")
    print(f"optimum J={res.optimum:.3f}")
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out)
    lines = []
    if (out / "metrics.csv").exists():
        meta, rows = io.read_table(out / "metrics.csv")
        lines += ["## Sampler metrics", "",
                  f"config `{meta.get('config')}`, seed {meta.get('seed')}", "",
                  "| method | metric | mean | sd |", "|---|---|---|---|"]
        lines += [f"| {r['method']} | {r['metric']} | {r['mean']:.3f} | {r['sd']:.3f} |" for r in rows]
        lines.append("")
    if (out / "task1_curve.csv").exists():
        meta, rows = io.read_table(out / "task1_curve.csv")
        lines += ["## Kernel learning", "", f"config `{meta.get('config')}`, seed {meta.get('seed')}, "
                  f"optimum J {float(meta.get('optimum', 'nan')):.3f}", "",
                  "| method | trained | J | attempts |", "|---|---|---|---|"]
        lines += [f"| {r['method']} | {int(r['trained'])} | {r['mean_reward']:.3f} | {r['mean_attempts']:.2f} |"
                  for r in rows]
        lines.append("")
    if not lines:
        raise ConfigError("--out", f"no metrics.csv or task1_curve.csv in {out}")
    text = "\n".join(lines)
    (out / "report.md").write_text(text)
    print(text)
    if args.plot:
        _plot(out)
    return EXIT_OK


def _plot(out: Path):
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib is not installed; skipping plots")
        return
    if (out / "task1_curve.csv").exists():
        _, rows = io.read_table(out / "task1_curve.csv")
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for m in ("adaptive", "diverse-fixed", "diverse-learned"):
            pts = [(r["trained"], r["mean_reward"]) for r in rows if r["method"] == m]
            if len(pts) == 1:
                ax.axhline(pts[0][1], ls="--", label=m)
            else:
                ax.plot(*zip(*pts), marker="o", label=m)
        ax.set_xlabel("training tasks")
        ax.set_ylabel("mean J")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "task1_curve.png", dpi=120)
        plt.close(fig)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config (defaults when omitted)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--quantile", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="skillset", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"skillset {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="active learning run")
    t.add_argument("--strategy", choices=("straddle", "random"))
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", parents=[common], help="draw from a trained model's set")
    s.add_argument("--model", required=True)
    s.add_argument("--context", help="comma-separated context values")
    s.add_argument("--sampler", choices=SAMPLERS)
    s.add_argument("--count", type=int)
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("evaluate", parents=[common], help="sampler metrics table")
    e.add_argument("--strategy", choices=("straddle", "random"))
    e.set_defaults(func=cmd_evaluate)

    k = sub.add_parser("task1", parents=[common], help="kernel-learning experiment")
    k.set_defaults(func=cmd_task1)

    r = sub.add_parser("report", parents=[common], help="render tables from data files")
    r.add_argument("--plot", action="store_true", help="also write PNG plots (needs matplotlib)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SamplerCapError as exc:
        print(f"sampler cap: {exc}", file=sys.stderr)
        return EXIT_CAP
    except OracleError as exc:
        print(f"oracle failure: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except (ConditioningError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
