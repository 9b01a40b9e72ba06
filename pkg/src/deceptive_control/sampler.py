"""Path-integral action sampling.

At each time step a fresh batch of rollouts is drawn under the reference
policy, every rollout is weighted by its exponentiated tail cost, and one
rollout is picked by inverting the cumulative weight function.  The control
that rollout applied first is the action taken.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng as streams
from .model import CostModel, DeterministicDynamics, StochasticPolicy, Trajectory, path_cost
from .rng import Stream

log = logging.getLogger(__name__)


class NoAdmissibleRollout(RuntimeError):
    """Every rollout in a batch had infinite cost."""


@dataclass(frozen=True)
class RolloutBatch:
    """``n`` reference-policy tails launched from ``(t, x_t)``.

    ``states``/``controls`` hold the full tails (shapes ``(n, T-t+1, nx)`` and
    ``(n, T-t, nu)``) unless the batch was built with ``keep_paths=False``.
    """

    t: int
    x_t: np.ndarray
    first_controls: np.ndarray
    tail_costs: np.ndarray
    states: np.ndarray | None = None
    controls: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.tail_costs)

    def trajectory(self, i: int) -> Trajectory:
        if self.states is None:
            raise ValueError("batch was built without paths")
        return Trajectory(self.states[i], self.controls[i], float(self.tail_costs[i]), self.t)


@dataclass(frozen=True)
class WeightTable:
    weights: np.ndarray     # r_t(i) after the shift
    cumulative: np.ndarray  # F_t(i) for i = 1..n
    cost_shift: float
    lam: float

    @property
    def total(self) -> float:
        return float(self.cumulative[-1])

    @property
    def probabilities(self) -> np.ndarray:
        return self.weights / self.total

    def F(self, x: float) -> float:
        """Cumulative selector ``F_t(x) = sum_{i <= floor(x)} r_t(i)`` on ``[0, n]``."""
        k = int(np.floor(x))
        return 0.0 if k <= 0 else float(self.cumulative[min(k, len(self.cumulative)) - 1])


@dataclass(frozen=True)
class StepRecord:
    t: int
    index: int           # selected rollout, 0-based
    weight: float        # r_t(j_t)
    total: float         # r_t
    n: int
    control: np.ndarray
    state: np.ndarray

    @property
    def llr_increment(self) -> float:
        return float(np.log(self.n * self.weight / self.total))


@dataclass(frozen=True)
class EpisodeRecord:
    steps: tuple[StepRecord, ...]

    def __len__(self):
        return len(self.steps)

    @property
    def indices(self) -> np.ndarray:
        return np.array([s.index for s in self.steps], dtype=np.int64)

    @property
    def weights(self) -> np.ndarray:
        return np.array([s.weight for s in self.steps])

    @property
    def totals(self) -> np.ndarray:
        return np.array([s.total for s in self.steps])

    @property
    def sample_counts(self) -> np.ndarray:
        return np.array([s.n for s in self.steps], dtype=np.int64)


def _simulate_tails(dyn, ref_policy, costs, t, x_t, n, stream, keep_paths):
    T = dyn.horizon
    X = np.repeat(np.asarray(x_t, dtype=float)[None, :], n, axis=0)
    cost = np.zeros(n)
    first = None
    states = controls = None
    if keep_paths:
        states = np.empty((n, T - t + 1, dyn.state_dim))
        controls = np.empty((n, T - t, dyn.control_dim))
        states[:, 0] = X
    for k in range(t, T):
        noise = stream.noise(streams.ROLLOUT, t, k, n, ref_policy.noise_dim, ref_policy.noise_kind)
        U = ref_policy.transform(k, X, noise)
        if first is None:
            first = U
        cost = cost + costs.stage(k, X, U)
        X = dyn.step_batch(k, X, U)
        if keep_paths:
            controls[:, k - t] = U
            states[:, k - t + 1] = X
    cost = cost + costs.terminal(X)
    if first is None:
        first = np.empty((n, dyn.control_dim))
    return first, cost, states, controls


def rollout_batch(dyn: DeterministicDynamics, ref_policy: StochasticPolicy, costs: CostModel,
                  t: int, x_t, n: int, stream: Stream, keep_paths: bool = True) -> RolloutBatch:
    """Sample ``n`` tails under the reference policy from ``(t, x_t)``.

    Rollout ``i`` reads its noise from counter ``(k, i, t, episode)`` of
    ``stream`` so the batch does not depend on evaluation order.  When paths
    are not needed and the policy ships a compiled kernel for this
    dynamics/cost pair, that kernel is used instead of the numpy loop.
    """
    if n < 1:
        raise ValueError("need at least one rollout")
    if not 0 <= t < dyn.horizon:
        raise ValueError(f"time index {t} outside [0, {dyn.horizon})")
    x_t = np.asarray(x_t, dtype=float)
    fused = getattr(ref_policy, "fused_rollout", None)
    if not keep_paths and fused is not None:
        out = fused(dyn, costs, t, x_t, n, stream)
        if out is not None:
            return RolloutBatch(t, x_t, out[0], out[1])
    first, cost, states, controls = _simulate_tails(dyn, ref_policy, costs, t, x_t, n, stream, keep_paths)
    return RolloutBatch(t, x_t, first, cost, states, controls)


def build_weight_table(batch: RolloutBatch, lam: float) -> WeightTable:
    return weight_table(batch.tail_costs, lam)


def weight_table(tail_costs, lam: float) -> WeightTable:
    """Weights ``exp(-(C_i - min C) / lam)``; forbidden (infinite) costs get weight 0."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    c = np.asarray(tail_costs, dtype=float)
    finite = np.isfinite(c)
    if not finite.any():
        raise NoAdmissibleRollout("no admissible rollout: every sampled path is forbidden")
    shift = float(c[finite].min())
    w = np.zeros_like(c)
    w[finite] = np.exp(-(c[finite] - shift) / lam)
    return WeightTable(w, np.cumsum(w), shift, float(lam))


def select_index(table: WeightTable, d: float) -> int:
    """Smallest 0-based ``i`` with ``F_t(i + 1) >= d``; ``d = 0`` picks the first positive weight."""
    if d <= 0.0:
        return int(np.flatnonzero(table.weights > 0)[0])
    i = int(np.searchsorted(table.cumulative, d, side="left"))
    return min(i, len(table.cumulative) - 1)


def select_action(table: WeightTable, batch: RolloutBatch, rng) -> tuple[int, np.ndarray]:
    """Draw ``d ~ unif[0, r_t]`` and return the chosen index and its first control.

    ``rng`` is a numpy ``Generator`` or an already-drawn uniform in ``[0, 1)``.
    """
    u = rng.random() if hasattr(rng, "random") else float(rng)
    j = select_index(table, u * table.total)
    return j, batch.first_controls[j]


def deceptive_action(dyn, ref_policy, costs, t: int, x_t, n: int, lam: float,
                     stream: Stream) -> tuple[np.ndarray, StepRecord]:
    batch = rollout_batch(dyn, ref_policy, costs, t, x_t, n, stream, keep_paths=False)
    table = build_weight_table(batch, lam)
    j, u = select_action(table, batch, stream.uniform(streams.SELECTION, t))
    rec = StepRecord(t, j, float(table.weights[j]), table.total, n, np.array(u), np.asarray(x_t, dtype=float))
    return np.array(u), rec


def run_episode(dyn, ref_policy, costs, x0, n: int, lam: float,
                stream: Stream) -> tuple[Trajectory, EpisodeRecord]:
    x = np.asarray(x0, dtype=float)
    states = [x]
    controls, steps = [], []
    for t in range(dyn.horizon):
        u, rec = deceptive_action(dyn, ref_policy, costs, t, x, n, lam, stream)
        x = dyn.step_batch(t, x[None, :], u[None, :])[0]
        states.append(x)
        controls.append(u)
        steps.append(rec)
    return _finish(dyn, costs, states, controls), EpisodeRecord(tuple(steps))


def run_reference_episode(dyn, ref_policy, costs, x0, stream: Stream) -> Trajectory:
    """Closed loop under the reference policy itself (no rollouts)."""
    x = np.asarray(x0, dtype=float)
    states, controls = [x], []
    for t in range(dyn.horizon):
        noise = stream.noise(streams.REFERENCE, 0, t, 1, ref_policy.noise_dim, ref_policy.noise_kind)
        u = ref_policy.transform(t, x[None, :], noise)[0]
        x = dyn.step_batch(t, x[None, :], u[None, :])[0]
        states.append(x)
        controls.append(u)
    return _finish(dyn, costs, states, controls)


def _finish(dyn, costs, states, controls) -> Trajectory:
    S = np.array(states)
    U = np.array(controls).reshape(len(controls), dyn.control_dim)
    traj = Trajectory(S, U, 0.0)
    return Trajectory(S, U, path_cost(costs, traj))


def run_episodes(dyn, ref_policy, costs, x0, n: int, lam: float | None, seed: int,
                 episodes: int, threads: int = 1):
    """Run ``episodes`` independent episodes; ``lam=None`` follows the reference policy.

    Episode ``e`` uses ``Stream(seed, e)``; results come back in episode order
    and do not depend on ``threads``.
    """
    def one(e):
        s = Stream(seed, e)
        if lam is None:
            return run_reference_episode(dyn, ref_policy, costs, x0, s), None
        return run_episode(dyn, ref_policy, costs, x0, n, lam, s)

    if threads <= 1:
        return [one(e) for e in range(episodes)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(episodes)))


def estimate_Z(batch: RolloutBatch, lam: float) -> tuple[float, float]:
    """Monte-Carlo desirability ``(1/n) sum_i exp(-C_i / lam)`` as ``(log Z, Z)``."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    c = np.asarray(batch.tail_costs, dtype=float)
    finite = np.isfinite(c)
    if not finite.any():
        return -np.inf, 0.0
    shift = c[finite].min()
    logz = -shift / lam + np.log(np.exp(-(c[finite] - shift) / lam).sum()) - np.log(len(c))
    return float(logz), float(np.exp(logz))
