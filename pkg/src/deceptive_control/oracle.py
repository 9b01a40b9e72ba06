"""Exact solvers used as ground truth for the sampler.

* :func:`enumerate_dp` runs the soft Bellman recursion on finite problems
  (deterministic or stochastic transitions) in the log domain.
* :func:`z_recursion` and :func:`path_integral_Z` compute the desirability
  ``Z_t = exp(-J_t / lam)`` by the linear recursion and by brute-force
  enumeration of action sequences.
* :func:`grid_dp` discretises low-dimensional continuous problems.
* :func:`gaussian_one_step` is the closed form for one linear-quadratic step
  under a Gaussian reference.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import tomli
from scipy.interpolate import RegularGridInterpolator
from scipy.special import logsumexp

from .model import CategoricalPolicy, ConfigurationError, CostModel, FunctionDynamics


class EnumerationCapExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class FiniteKLProblem:
    """Finite-state, finite-action instance of the KL control problem.

    Arrays are indexed ``[t, x, u]``.  ``next_state`` gives the deterministic
    successor; ``transition`` (shape ``(T, S, A, S)``) replaces it for
    stochastic problems.  ``reference[t, x, u] == 0`` marks a disallowed action.
    """

    reference: np.ndarray
    stage_cost: np.ndarray
    terminal_cost: np.ndarray
    lam: float
    next_state: np.ndarray | None = None
    transition: np.ndarray | None = None

    def __post_init__(self):
        R = np.asarray(self.reference, dtype=float)
        if R.ndim != 3:
            raise ConfigurationError("reference must have shape (T, S, A)")
        if (R < 0).any() or not np.allclose(R.sum(axis=2), 1.0, rtol=0, atol=1e-12):
            raise ConfigurationError("reference rows must be non-negative and sum to 1")
        if not self.lam > 0:
            raise ConfigurationError("lambda must be positive")
        if (self.next_state is None) == (self.transition is None):
            raise ConfigurationError("give exactly one of next_state or transition")
        if np.shape(self.stage_cost) != R.shape:
            raise ConfigurationError("stage_cost must match reference shape")
        if np.shape(self.terminal_cost) != (R.shape[1],):
            raise ConfigurationError("terminal_cost must have shape (S,)")
        if self.next_state is not None:
            ns = np.asarray(self.next_state)
            if ns.shape != R.shape or ns.min() < 0 or ns.max() >= R.shape[1]:
                raise ConfigurationError("next_state must be (T, S, A) with entries in [0, S)")
        else:
            P = np.asarray(self.transition, dtype=float)
            if P.shape != R.shape + (R.shape[1],) or not np.allclose(P.sum(axis=3), 1.0, atol=1e-12):
                raise ConfigurationError("transition must be (T, S, A, S) with rows summing to 1")

    @property
    def horizon(self) -> int:
        return self.reference.shape[0]

    @property
    def n_states(self) -> int:
        return self.reference.shape[1]

    @property
    def n_actions(self) -> int:
        return self.reference.shape[2]

    @property
    def deterministic(self) -> bool:
        return self.next_state is not None

    def transition_probs(self) -> np.ndarray:
        if self.transition is not None:
            return np.asarray(self.transition, dtype=float)
        T, S, A = self.reference.shape
        P = np.zeros((T, S, A, S))
        t, x, u = np.indices((T, S, A))
        P[t, x, u, self.next_state] = 1.0
        return P

    def sampler_model(self):
        """``(dynamics, reference policy, costs)`` for the path-integral sampler.

        States and actions are carried as float indices in 1-element vectors.
        """
        if not self.deterministic:
            raise ConfigurationError("the sampler needs deterministic transitions")
        ns = np.asarray(self.next_state)
        C = np.asarray(self.stage_cost, dtype=float)
        CT = np.asarray(self.terminal_cost, dtype=float)

        def step(t, X, U):
            return ns[t, X[:, 0].astype(np.int64), U[:, 0].astype(np.int64)][:, None].astype(float)

        dyn = FunctionDynamics(step, 1, 1, self.horizon)
        pol = CategoricalPolicy(lambda t, x: self.reference[t, x])
        costs = CostModel(
            stage=lambda t, X, U: C[t, X[:, 0].astype(np.int64), U[:, 0].astype(np.int64)],
            terminal=lambda X: CT[X[:, 0].astype(np.int64)],
        )
        return dyn, pol, costs


@dataclass(frozen=True)
class DPolicySolution:
    J: np.ndarray   # (T + 1, S)
    Q: np.ndarray   # (T, S, A)
    lam: float

    @property
    def Z(self) -> np.ndarray:
        return np.exp(-self.J / self.lam)


def _log(p):
    with np.errstate(divide="ignore"):
        return np.log(p)


def enumerate_dp(prob: FiniteKLProblem) -> DPolicySolution:
    T, S, A = prob.reference.shape
    lam = prob.lam
    P = prob.transition_probs()
    logR = _log(np.asarray(prob.reference, dtype=float))
    J = np.empty((T + 1, S))
    Q = np.empty((T, S, A))
    J[T] = prob.terminal_cost
    for t in range(T - 1, -1, -1):
        with np.errstate(invalid="ignore"):
            # 0 * inf -> nan for unreachable infinite-cost successors
            expJ = np.where(P[t] > 0, P[t] * J[t + 1], 0.0).sum(axis=2)
        rho = prob.stage_cost[t] + expJ
        logits = np.where(logR[t] > -np.inf, logR[t] - rho / lam, -np.inf)
        lse = logsumexp(logits, axis=1)
        J[t] = -lam * lse
        with np.errstate(invalid="ignore"):
            Q[t] = np.where(np.isfinite(lse)[:, None], np.exp(logits - lse[:, None]), 0.0)
    return DPolicySolution(J, Q, lam)


def z_recursion(prob: FiniteKLProblem) -> np.ndarray:
    """Desirability tables ``Z[t, x]`` from the linear backward recursion."""
    if not prob.deterministic:
        raise ConfigurationError("z_recursion requires deterministic transitions")
    T, S, A = prob.reference.shape
    Z = np.empty((T + 1, S))
    Z[T] = np.exp(-np.asarray(prob.terminal_cost, dtype=float) / prob.lam)
    for t in range(T - 1, -1, -1):
        w = prob.reference[t] * np.exp(-prob.stage_cost[t] / prob.lam)
        Z[t] = (w * Z[t + 1][prob.next_state[t]]).sum(axis=1)
    return Z


def path_integral_Z(prob: FiniteKLProblem, t: int, x: int, cap: int = 1_000_000) -> float:
    """``E_R exp(-C_{t:T} / lam)`` by enumerating every action sequence from ``(t, x)``."""
    if not prob.deterministic:
        raise ConfigurationError("path_integral_Z requires deterministic transitions")
    T, A = prob.horizon, prob.n_actions
    count = A ** (T - t)
    if count > cap:
        raise EnumerationCapExceeded(f"{count} action sequences exceed the cap of {cap}")
    terms = []
    for seq in itertools.product(range(A), repeat=T - t):
        s, p, c = x, 1.0, 0.0
        for k, u in enumerate(seq, start=t):
            p *= prob.reference[k, s, u]
            if p == 0.0:
                break
            c += prob.stage_cost[k, s, u]
            s = prob.next_state[k, s, u]
        else:
            c += prob.terminal_cost[s]
            terms.append(p * math.exp(-c / prob.lam))
    return math.fsum(terms)


def enumerate_paths(prob: FiniteKLProblem, policy: np.ndarray, x0: int):
    """Every positive-probability path from ``x0`` under ``policy`` or the reference.

    Yields ``(states, actions, prob_policy, prob_reference, cost)``; transition
    probabilities are included in both path probabilities.
    """
    T = prob.horizon
    P = prob.transition_probs()
    R = prob.reference

    def rec(t, states, actions, q, r, c):
        s = states[-1]
        if t == T:
            yield tuple(states), tuple(actions), q, r, c + prob.terminal_cost[s]
            return
        for u in range(prob.n_actions):
            qu, ru = policy[t, s, u], R[t, s, u]
            if qu == 0.0 and ru == 0.0:
                continue
            for s2 in np.flatnonzero(P[t, s, u] > 0):
                pt = P[t, s, u, s2]
                yield from rec(t + 1, states + [int(s2)], actions + [u], q * qu * pt, r * ru * pt,
                               c + prob.stage_cost[t, s, u])

    yield from rec(0, [x0], [], 1.0, 1.0, 0.0)


def state_marginals(prob: FiniteKLProblem, policy: np.ndarray, x0: int) -> np.ndarray:
    """Forward state distribution ``mu[t, x]`` under ``policy`` from ``x0``."""
    T, S, A = prob.reference.shape
    P = prob.transition_probs()
    mu = np.zeros((T + 1, S))
    mu[0, x0] = 1.0
    for t in range(T):
        mu[t + 1] = np.einsum("x,xu,xuy->y", mu[t], policy[t], P[t])
    return mu


def policy_objective(prob: FiniteKLProblem, policy: np.ndarray, x0: int) -> float:
    """``E_Q[C_{0:T}] + lam * D(Q || R)`` by exhaustive path enumeration."""
    total = 0.0
    for _, _, q, r, c in enumerate_paths(prob, policy, x0):
        if q == 0.0:
            continue
        if r == 0.0:
            return math.inf
        total += q * (c + prob.lam * math.log(q / r))
    return total


def random_finite_problem(rng: np.random.Generator, n_states: int, n_actions: int, horizon: int,
                          lam: float, deterministic: bool = True) -> FiniteKLProblem:
    R = rng.dirichlet(np.ones(n_actions), size=(horizon, n_states))
    R = R / R.sum(axis=2, keepdims=True)
    C = rng.uniform(0.0, 3.0, size=(horizon, n_states, n_actions))
    CT = rng.uniform(0.0, 3.0, size=n_states)
    if deterministic:
        ns = rng.integers(0, n_states, size=(horizon, n_states, n_actions))
        return FiniteKLProblem(R, C, CT, lam, next_state=ns)
    P = rng.dirichlet(np.ones(n_states), size=(horizon, n_states, n_actions))
    return FiniteKLProblem(R, C, CT, lam, transition=P / P.sum(axis=3, keepdims=True))


def load_finite_problem(path) -> FiniteKLProblem:
    """Read a TOML description with keys ``lambda``, ``reference``, ``stage_cost``,
    ``terminal_cost`` and one of ``next_state`` / ``transition``."""
    with open(path, "rb") as fh:
        d = tomli.load(fh)
    allowed = {"lambda", "reference", "stage_cost", "terminal_cost", "next_state", "transition", "name"}
    extra = set(d) - allowed
    if extra:
        raise ConfigurationError(f"unknown keys {sorted(extra)}")
    try:
        return FiniteKLProblem(
            reference=np.asarray(d["reference"], dtype=float),
            stage_cost=np.asarray(d["stage_cost"], dtype=float),
            terminal_cost=np.asarray(d["terminal_cost"], dtype=float),
            lam=float(d["lambda"]),
            next_state=None if "next_state" not in d else np.asarray(d["next_state"], dtype=np.int64),
            transition=None if "transition" not in d else np.asarray(d["transition"], dtype=float),
        )
    except KeyError as exc:
        raise ConfigurationError(f"missing key {exc}") from exc


# ------------------------------------------------------------ grid DP

@dataclass(frozen=True)
class GridSpec:
    state_lo: tuple
    state_hi: tuple
    state_n: tuple
    control_lo: tuple
    control_hi: tuple
    control_n: tuple
    out_of_grid: str = "clamp"   # or "error"

    def axes(self, lo, hi, n):
        return [np.linspace(a, b, k) for a, b, k in zip(lo, hi, n)]

    def refined(self) -> "GridSpec":
        """Halve every spacing."""
        return GridSpec(self.state_lo, self.state_hi, tuple(2 * n - 1 for n in self.state_n),
                        self.control_lo, self.control_hi, tuple(2 * n - 1 for n in self.control_n),
                        self.out_of_grid)


@dataclass(frozen=True)
class GridProblem:
    """Continuous problem for :func:`grid_dp`; all callables act on batches."""

    step: Callable[[int, np.ndarray, np.ndarray], np.ndarray]
    ref_logpdf: Callable[[int, np.ndarray, np.ndarray], np.ndarray]
    stage: Callable[[int, np.ndarray, np.ndarray], np.ndarray]
    terminal: Callable[[np.ndarray], np.ndarray]
    horizon: int
    lam: float


class GridSolution:
    def __init__(self, prob: GridProblem, spec: GridSpec, J: list, state_axes, controls, log_du):
        self.prob = prob
        self.spec = spec
        self.J = J                    # J[t] on the state grid, t = 0..T
        self.state_axes = state_axes
        self.controls = controls      # (K, m) control nodes
        self._log_du = log_du
        self._interp = [RegularGridInterpolator(state_axes, j, method="linear",
                                                bounds_error=False, fill_value=None) for j in J]

    def value(self, t: int, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self._interp[t](_inside(X, self.state_axes, self.spec.out_of_grid))

    def _logits(self, t, x):
        p = self.prob
        x = np.asarray(x, dtype=float).reshape(1, -1)
        X = np.repeat(x, len(self.controls), axis=0)
        nxt = p.step(t, X, self.controls)
        rho = p.stage(t, X, self.controls) + self.value(t + 1, nxt)
        logr = p.ref_logpdf(t, X, self.controls) + self._log_du
        logr = logr - logsumexp(logr)
        return logr, rho

    def policy(self, t: int, x) -> np.ndarray:
        """Probability mass of the optimal policy on the control nodes at ``(t, x)``."""
        logr, rho = self._logits(t, x)
        logits = logr - rho / self.prob.lam
        return np.exp(logits - logsumexp(logits))

    def reference(self, t: int, x) -> np.ndarray:
        logr, _ = self._logits(t, x)
        return np.exp(logr)


def _inside(X, axes, mode):
    lo = np.array([a[0] for a in axes])
    hi = np.array([a[-1] for a in axes])
    out = (X < lo) | (X > hi)
    if out.any():
        if mode == "error":
            raise ValueError("successor state left the grid")
        warnings.warn("successor state left the grid; clamping", RuntimeWarning, stacklevel=3)
        X = np.clip(X, lo, hi)
    return X


def grid_dp(prob: GridProblem, spec: GridSpec, chunk: int = 256) -> GridSolution:
    """Soft Bellman recursion on a tensor grid with multilinear interpolation.

    The reference density is integrated with the midpoint rule on the
    control grid and renormalised there.
    """
    state_axes = spec.axes(spec.state_lo, spec.state_hi, spec.state_n)
    control_axes = spec.axes(spec.control_lo, spec.control_hi, spec.control_n)
    nodes = np.stack([g.ravel() for g in np.meshgrid(*state_axes, indexing="ij")], axis=1)
    controls = np.stack([g.ravel() for g in np.meshgrid(*control_axes, indexing="ij")], axis=1)
    du = np.prod([a[1] - a[0] if len(a) > 1 else 1.0 for a in control_axes])
    log_du = np.log(du)
    shape = tuple(len(a) for a in state_axes)
    T, lam = prob.horizon, prob.lam
    J = [None] * (T + 1)
    J[T] = prob.terminal(nodes).reshape(shape)
    K = len(controls)
    for t in range(T - 1, -1, -1):
        interp = RegularGridInterpolator(state_axes, J[t + 1], method="linear",
                                         bounds_error=False, fill_value=None)
        out = np.empty(len(nodes))
        for s in range(0, len(nodes), chunk):
            xs = nodes[s:s + chunk]
            X = np.repeat(xs, K, axis=0)
            U = np.tile(controls, (len(xs), 1))
            nxt = _inside(prob.step(t, X, U), state_axes, spec.out_of_grid)
            rho = (prob.stage(t, X, U) + interp(nxt)).reshape(len(xs), K)
            logr = (prob.ref_logpdf(t, X, U) + log_du).reshape(len(xs), K)
            logr = logr - logsumexp(logr, axis=1, keepdims=True)
            out[s:s + chunk] = -lam * logsumexp(logr - rho / lam, axis=1)
        J[t] = out.reshape(shape)
    return GridSolution(prob, spec, J, state_axes, controls, log_du)


# ------------------------------------------------------- closed forms

def gaussian_one_step(q: float, a: float, b: float, mu: float, sigma2: float, lam: float,
                      x: float) -> tuple[float, float]:
    """Mean and variance of the optimal policy for ``x' = a x + b u``, cost ``q x'^2 / 2``,
    reference ``N(mu, sigma2)``.

    Completing the square in ``exp(-q (a x + b u)^2 / (2 lam)) N(u; mu, sigma2)``
    gives precision ``1/sigma2 + q b^2 / lam``.
    """
    if q < 0 or not sigma2 > 0 or not lam > 0:
        raise ValueError("need q >= 0, sigma2 > 0, lam > 0")
    var = 1.0 / (1.0 / sigma2 + q * b * b / lam)
    mean = var * (mu / sigma2 - q * a * b * x / lam)
    return mean, var


@dataclass(frozen=True)
class DualityReport:
    free_energy: float
    p_star: np.ndarray
    gaps: np.ndarray       # U(P, C) + lam D(P || R) - F for each trial P
    star_gap: float

    @property
    def min_gap(self) -> float:
        return float(self.gaps.min()) if len(self.gaps) else math.inf


def kl_discrete(p, r) -> float:
    p = np.asarray(p, dtype=float)
    r = np.asarray(r, dtype=float)
    m = p > 0
    if (r[m] == 0).any():
        return math.inf
    return float(np.sum(p[m] * (np.log(p[m]) - np.log(r[m]))))


def legendre_duality_check(R, C, lam: float, trials) -> DualityReport:
    """Check ``-lam log E_R exp(-C/lam) <= E_P C + lam D(P || R)`` with equality at the softmax."""
    R = np.asarray(R, dtype=float)
    C = np.asarray(C, dtype=float)
    logits = np.log(R) - C / lam
    F = -lam * logsumexp(logits)
    p_star = np.exp(logits - logsumexp(logits))

    def objective(P):
        return float(np.dot(P, C)) + lam * kl_discrete(P, R)

    gaps = np.array([objective(np.asarray(P, dtype=float)) - F for P in trials])
    return DualityReport(float(F), p_star, gaps, objective(p_star) - F)
