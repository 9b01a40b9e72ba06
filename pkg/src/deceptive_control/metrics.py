"""Detection and divergence measurements.

The supervisor accepts "agent follows the reference" when the path
log-likelihood ratio ``log dQ/dR`` is at most a threshold ``c``.  Any such
test has ``FPR + FNR >= exp(-D(Q || R)) / 2`` (Bretagnolle-Huber), so the KL
divergence bounds how detectable the deceptive policy is.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .oracle import FiniteKLProblem, enumerate_paths, kl_discrete
from .sampler import EpisodeRecord


@dataclass(frozen=True)
class LLRSeries:
    cumulative: np.ndarray   # (episodes, T + 1)

    @property
    def mean(self) -> np.ndarray:
        return self.cumulative.mean(axis=0)

    @property
    def std(self) -> np.ndarray:
        return self.cumulative.std(axis=0, ddof=1) if len(self.cumulative) > 1 else np.zeros(self.cumulative.shape[1])

    @property
    def final(self) -> np.ndarray:
        return self.cumulative[:, -1]


def episode_llr(record: EpisodeRecord) -> np.ndarray:
    """Cumulative ``sum_{k<t} log(N r_k(j_k) / r_k)`` for ``t = 0..T``.

    Under the sampled policy rollout ``j_k`` is picked with probability
    ``r_k(j_k) / r_k``; under the reference every rollout is equally likely.
    """
    inc = np.log(record.sample_counts * record.weights / record.totals) if len(record) else np.empty(0)
    return np.concatenate([[0.0], np.cumsum(inc)])


def llr_series(records: Iterable[EpisodeRecord]) -> LLRSeries:
    return LLRSeries(np.array([episode_llr(r) for r in records]))


def stagewise_kl_finite(Q: np.ndarray, R: np.ndarray, visitation: np.ndarray) -> float:
    """``sum_t E_{x ~ mu_t} D(Q_t(.|x) || R_t(.|x))`` with ``mu`` the state marginals under ``Q``."""
    total = 0.0
    for t in range(Q.shape[0]):
        for x in np.flatnonzero(visitation[t] > 0):
            d = kl_discrete(Q[t, x], R[t, x])
            if math.isinf(d):
                return math.inf
            total += visitation[t, x] * d
    return total


def joint_kl_finite(prob: FiniteKLProblem, Q: np.ndarray, x0: int) -> float:
    """Path-space ``D(Q || R)`` by enumerating every path."""
    total = []
    for _, _, q, r, _ in enumerate_paths(prob, Q, x0):
        if q == 0.0:
            continue
        if r == 0.0:
            return math.inf
        total.append(q * math.log(q / r))
    return math.fsum(total)


def bh_bound(kl: float) -> float:
    if kl < 0:
        raise ValueError("KL divergence must be non-negative")
    return 0.5 * math.exp(-kl)


@dataclass(frozen=True)
class DetectionReport:
    kl_estimate: float
    bh_lower_bound: float
    thresholds: np.ndarray
    fpr: np.ndarray
    fnr: np.ndarray

    @property
    def sweep(self) -> list[tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.fnr.tolist()))

    @property
    def min_error(self) -> float:
        return float((self.fpr + self.fnr).min())

    @property
    def holds(self) -> np.ndarray:
        return self.fpr + self.fnr >= self.bh_lower_bound


def path_llrs(prob: FiniteKLProblem, Q: np.ndarray, x0: int):
    """Arrays ``(llr, prob_Q, prob_R)`` over every path reachable under ``Q`` or ``R``."""
    llr, pq, pr = [], [], []
    for _, _, q, r, _ in enumerate_paths(prob, Q, x0):
        if q == 0.0 and r == 0.0:
            continue
        llr.append(math.inf if r == 0.0 else (-math.inf if q == 0.0 else math.log(q / r)))
        pq.append(q)
        pr.append(r)
    return np.array(llr), np.array(pq), np.array(pr)


def detection_sweep(prob: FiniteKLProblem, Q: np.ndarray, x0: int,
                    thresholds: Sequence[float] | None = None, n_thresholds: int = 200,
                    check: bool = True) -> DetectionReport:
    """Exact error rates of the test "reject R when the path LLR exceeds c".

    FPR is ``Pr_R[llr > c]`` and FNR is ``Pr_Q[llr <= c]``.  With ``check``
    a violated Bretagnolle-Huber inequality raises ``AssertionError``.
    """
    llr, pq, pr = path_llrs(prob, Q, x0)
    kl = joint_kl_finite(prob, Q, x0)
    if thresholds is None:
        fin = llr[np.isfinite(llr)]
        lo, hi = (fin.min(), fin.max()) if len(fin) else (0.0, 0.0)
        thresholds = np.linspace(lo - 1.0, hi + 1.0, n_thresholds)
    c = np.asarray(thresholds, dtype=float)
    above = llr[None, :] > c[:, None]
    fpr = (above * pr[None, :]).sum(axis=1)
    fnr = (~above * pq[None, :]).sum(axis=1)
    report = DetectionReport(kl, bh_bound(kl) if np.isfinite(kl) else 0.0, c, fpr, fnr)
    if check and not report.holds.all():
        bad = int(np.flatnonzero(~report.holds)[0])
        raise AssertionError(f"FPR + FNR = {fpr[bad] + fnr[bad]:.6g} below bound "
                             f"{report.bh_lower_bound:.6g} at c = {c[bad]:.6g}")
    return report


def pr_safe(paths, region) -> float:
    """Fraction of paths whose every position ``(P^X_t, P^Y_t)`` avoids ``region``.

    ``region`` is a callable ``(px, py) -> bool array`` or an object with an
    ``in_fire`` method; ``None`` means no forbidden region.
    """
    paths = list(paths)
    if not paths:
        raise ValueError("no paths")
    if region is None:
        return 1.0
    test = getattr(region, "in_fire", region)
    safe = sum(not np.any(test(p.states[:, 0], p.states[:, 1])) for p in paths)
    return safe / len(paths)


# ------------------------------------------------------------- CSV output

def fmt(v) -> str:
    """17 significant digits, so floats round-trip exactly."""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_llr_csv(path, series: LLRSeries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "t", "cum_llr"])
        for e, row in enumerate(series.cumulative):
            for t, v in enumerate(row):
                w.writerow([e, t, fmt(v)])


@dataclass(frozen=True)
class RunSummary:
    lam: float | None
    n: int
    episodes: int
    pr_safe: float
    mean_final_llr: float
    std_final_llr: float
    seed: int
    seconds: float = field(default=0.0, compare=False)


SUMMARY_FIELDS = ["lambda", "N", "episodes", "pr_safe", "mean_final_llr", "std_final_llr", "seed"]


def write_summary_csv(path, rows: Sequence[RunSummary]) -> None:
    """Summary rows; ``lambda`` is ``inf`` for the reference policy itself.

    Wall-clock time is left out so reruns stay byte-identical.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for r in rows:
            w.writerow([fmt(math.inf if r.lam is None else r.lam), r.n, r.episodes, fmt(r.pr_safe),
                        fmt(r.mean_final_llr), fmt(r.std_final_llr), r.seed])
