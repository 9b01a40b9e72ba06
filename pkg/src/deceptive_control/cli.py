"""Command-line driver.

    deceptive-control run      [CONFIG] [--lambda L] [--samples N] ...
    deceptive-control sweep    [CONFIG] --lambdas 3,2,0.5 [--no-reference]
    deceptive-control compare-oracle FIXTURE --samples 100,1000 --episodes 2000

Exit status: 0 on success, 1 for configuration errors, 2 when a batch has no
admissible rollout.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import metrics
from .metrics import RunSummary, fmt
from .model import ConfigurationError
from .oracle import enumerate_dp, load_finite_problem
from .sampler import NoAdmissibleRollout, build_weight_table, deceptive_action, rollout_batch, run_episodes
from .rng import Stream
from .scenarios import ConfigError, RunConfig, load_config

log = logging.getLogger("deceptive_control")

PATH_FIELDS = ["episode", "t", "px", "py", "s", "theta", "a", "omega"]


def write_paths_csv(path, trajectories) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PATH_FIELDS)
        for e, traj in enumerate(trajectories):
            T = traj.horizon
            for t in range(T + 1):
                u = [fmt(v) for v in traj.controls[t]] if t < T else ["", ""]
                w.writerow([e, t, *(fmt(v) for v in traj.states[t]), *u])


def run_config(cfg: RunConfig, lam: float | None, threads: int = 1):
    """Episodes for one lambda (``None`` runs the reference policy)."""
    dyn, pol, costs = cfg.scenario.problem()
    start = time.perf_counter()
    results = run_episodes(dyn, pol, costs, np.array(cfg.scenario.x0), cfg.samples, lam,
                           cfg.seed, cfg.episodes, threads)
    trajs = [r[0] for r in results]
    if lam is None:
        series = metrics.LLRSeries(np.zeros((len(trajs), dyn.horizon + 1)))
    else:
        series = metrics.llr_series(r[1] for r in results)
    final = series.final
    summary = RunSummary(
        lam=lam, n=cfg.samples if lam is not None else 0, episodes=cfg.episodes,
        pr_safe=metrics.pr_safe(trajs, cfg.scenario),
        mean_final_llr=float(final.mean()),
        std_final_llr=float(final.std(ddof=1)) if len(final) > 1 else 0.0,
        seed=cfg.seed, seconds=time.perf_counter() - start)
    return trajs, series, summary


def _emit(out: Path, trajs, series, summaries):
    out.mkdir(parents=True, exist_ok=True)
    write_paths_csv(out / "paths.csv", trajs)
    metrics.write_llr_csv(out / "llr.csv", series)
    metrics.write_summary_csv(out / "summary.csv", summaries)


def _describe(s: RunSummary) -> str:
    name = "reference" if s.lam is None else f"lambda={s.lam:g}"
    return (f"{name:>14}  N={s.n:<7d} episodes={s.episodes:<4d} pr_safe={s.pr_safe:.3f}  "
            f"final LLR {s.mean_final_llr:8.3f} +/- {s.std_final_llr:.3f}  ({s.seconds:.1f}s)")


def _load(args) -> RunConfig:
    path = args.config_opt or args.config
    cfg = load_config(path) if path else RunConfig()
    over = {}
    if getattr(args, "lam", None) is not None:
        over["lam"] = args.lam
    for key in ("samples", "episodes", "seed", "out_dir"):
        val = getattr(args, key, None)
        if val is not None:
            over[key] = val
    return replace(cfg, **over) if over else cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    lam = None if args.reference else cfg.lam
    trajs, series, summary = run_config(cfg, lam, args.threads)
    _emit(Path(cfg.out_dir), trajs, series, [summary])
    print(_describe(summary))
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    lams = [float(v) for v in args.lambdas.split(",")]
    if any(not v > 0 for v in lams):
        raise ConfigError("--lambdas: every λ must be positive")
    out = Path(cfg.out_dir)
    runs = ([None] if args.reference else []) + lams
    summaries = []
    for lam in runs:
        trajs, series, summary = run_config(cfg, lam, args.threads)
        sub = out / ("reference" if lam is None else f"lambda_{fmt(lam)}")
        _emit(sub, trajs, series, [summary])
        summaries.append(summary)
        print(_describe(summary), flush=True)
    metrics.write_summary_csv(out / "summary.csv", summaries)
    # decreasing lambda, with the reference (lambda = inf) first
    ordered = sorted(summaries, key=lambda s: -np.inf if s.lam is None else -s.lam)
    safe = [s.pr_safe for s in ordered]
    ok = all(a < b for a, b in zip(safe, safe[1:]))
    print(f"pr_safe strictly increasing as lambda decreases: {'yes' if ok else 'NO'}")
    if not ok:
        log.warning("pr_safe ordering violated: %s", safe)
    return 0


def compare_oracle(prob, sizes, reps: int, seed: int):
    """Rows ``(t, x, N, tv_empirical, tv_conditional)``.

    ``tv_empirical`` compares action frequencies over ``reps`` independent
    runs of the sampler with the exact optimal policy; ``tv_conditional`` is
    the mean TV between the batch's own selection distribution and it.
    """
    sol = enumerate_dp(prob)
    dyn, pol, costs = prob.sampler_model()
    A = prob.n_actions
    rows = []
    for t in range(prob.horizon):
        for x in range(prob.n_states):
            exact = sol.Q[t, x]
            for n in sizes:
                counts = np.zeros(A)
                cond = 0.0
                for r in range(reps):
                    stream = Stream(seed, r)
                    batch = rollout_batch(dyn, pol, costs, t, np.array([float(x)]), n, stream, keep_paths=False)
                    p = np.bincount(batch.first_controls[:, 0].astype(int),
                                    weights=build_weight_table(batch, prob.lam).probabilities, minlength=A)
                    cond += 0.5 * np.abs(p - exact).sum()
                    u, _ = deceptive_action(dyn, pol, costs, t, np.array([float(x)]), n, prob.lam, stream)
                    counts[int(u[0])] += 1
                rows.append((t, x, n, 0.5 * np.abs(counts / reps - exact).sum(), cond / reps))
    return rows


def cmd_compare_oracle(args) -> int:
    try:
        prob = load_finite_problem(args.fixture)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    sizes = [int(v) for v in args.samples.split(",")]
    rows = compare_oracle(prob, sizes, args.episodes, args.seed)
    out = Path(args.out_dir or "out")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "tv.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "N", "tv_empirical", "tv_conditional"])
        for t, x, n, tv, ctv in rows:
            w.writerow([t, x, n, fmt(tv), fmt(ctv)])
    for t, x, n, tv, ctv in rows:
        print(f"t={t} x={x} N={n:<7d} TV(empirical)={tv:.4f}  TV(conditional)={ctv:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deceptive-control", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", nargs="?", help="TOML config with [scenario] and [run]")
        sp.add_argument("--config", dest="config_opt")
        sp.add_argument("--samples", type=int)
        sp.add_argument("--episodes", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir", dest="out_dir")
        sp.add_argument("--threads", type=int, default=1, help="wall-clock only; results do not change")

    r = sub.add_parser("run", help="closed-loop episodes for one lambda")
    common(r)
    r.add_argument("--lambda", dest="lam", type=float)
    r.add_argument("--reference", action="store_true", help="follow the reference policy instead")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="one summary row per lambda")
    common(s)
    s.add_argument("--lambdas", default="3,2,0.5")
    s.add_argument("--no-reference", dest="reference", action="store_false",
                   help="skip the reference-policy row")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("compare-oracle", help="TV distance of the sampler to the exact policy")
    c.add_argument("fixture")
    c.add_argument("--samples", default="100,1000,10000")
    c.add_argument("--episodes", type=int, default=1000, help="repetitions per (t, x, N)")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out-dir", dest="out_dir")
    c.set_defaults(func=cmd_compare_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ConfigurationError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NoAdmissibleRollout as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
