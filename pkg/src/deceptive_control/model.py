"""Deterministic dynamics, stochastic reference policies and additive costs.

Everything here works on batches: states are ``(n, state_dim)`` arrays and
controls ``(n, control_dim)`` arrays.  The single-sample helpers at the bottom
of the module wrap the batch interface.

Policies are reparameterised: a policy declares how much standard noise it
needs per draw (``noise_dim`` values of kind ``"normal"`` or ``"uniform"``)
and maps that noise to controls with :meth:`StochasticPolicy.transform`.
This keeps the noise source (the counter-based streams in
:mod:`deceptive_control.rng`) separate from the policy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class ConfigurationError(ValueError):
    """Inputs are inconsistent with the declared problem dimensions."""


class DeterministicDynamics:
    """Pure step rule ``x' = F_t(x, u)`` over a fixed horizon."""

    state_dim: int
    control_dim: int
    horizon: int

    def step_batch(self, t: int, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class FunctionDynamics(DeterministicDynamics):
    def __init__(self, fn: Callable[[int, np.ndarray, np.ndarray], np.ndarray],
                 state_dim: int, control_dim: int, horizon: int):
        if horizon < 0:
            raise ConfigurationError("horizon must be non-negative")
        self.fn = fn
        self.state_dim = state_dim
        self.control_dim = control_dim
        self.horizon = horizon

    def step_batch(self, t, X, U):
        return self.fn(t, X, U)


class StochasticPolicy:
    """Reference kernel ``R(du | x)`` at each time step."""

    control_dim: int
    noise_dim: int
    noise_kind: str = "normal"

    def transform(self, t: int, X: np.ndarray, noise: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def log_density(self, t: int, x: np.ndarray, u: np.ndarray) -> float:
        raise NotImplementedError

    def draw_noise(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.noise_kind == "normal":
            return rng.standard_normal((n, self.noise_dim))
        return rng.random((n, self.noise_dim))


MIN_VARIANCE = 1e-12


class GaussianPolicy(StochasticPolicy):
    """Gaussian reference ``N(mean(t, x), cov)`` with a fixed covariance.

    ``mean`` maps ``(t, X)`` with ``X`` of shape ``(n, state_dim)`` to an
    ``(n, control_dim)`` array.
    """

    def __init__(self, mean: Callable[[int, np.ndarray], np.ndarray], cov):
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T):
            raise ConfigurationError("covariance must be a symmetric matrix")
        eig = np.linalg.eigvalsh(cov)
        if eig.min() < MIN_VARIANCE:
            raise ConfigurationError(
                f"covariance eigenvalues must be >= {MIN_VARIANCE:g}, got {eig.min():g}")
        self.mean = mean
        self.cov = cov
        self.chol = np.linalg.cholesky(cov)
        self.control_dim = self.noise_dim = cov.shape[0]
        self._prec = np.linalg.inv(cov)
        self._log_norm = -0.5 * (self.control_dim * np.log(2 * np.pi)
                                 + np.linalg.slogdet(cov)[1])

    def transform(self, t, X, noise):
        # explicit products keep the rounding identical to the compiled kernels
        return self.mean(t, X) + (noise[:, :, None] * self.chol.T[None, :, :]).sum(axis=1)

    def log_density(self, t, x, u):
        x = np.asarray(x, dtype=float)
        r = np.asarray(u, dtype=float) - self.mean(t, x[None, :])[0]
        return float(self._log_norm - 0.5 * r @ self._prec @ r)


class CategoricalPolicy(StochasticPolicy):
    """Finite-action reference: ``probs(t, x_index)`` returns a probability row.

    Controls are action indices stored as floats in an ``(n, 1)`` array.
    """

    noise_kind = "uniform"
    control_dim = 1
    noise_dim = 1

    def __init__(self, probs: Callable[[int, int], np.ndarray]):
        self.probs = probs

    def transform(self, t, X, noise):
        out = np.empty((X.shape[0], 1))
        states = X[:, 0].astype(np.int64)
        if (states == states[0]).all():
            # one origin state: skip the masking
            cdf = np.cumsum(self.probs(t, int(states[0])))
            out[:, 0] = np.minimum(np.searchsorted(cdf, noise[:, 0] * cdf[-1], side="right"), len(cdf) - 1)
            return out
        for s in np.unique(states):
            mask = states == s
            cdf = np.cumsum(self.probs(t, int(s)))
            idx = np.searchsorted(cdf, noise[mask, 0] * cdf[-1], side="right")
            out[mask, 0] = np.minimum(idx, len(cdf) - 1)
        return out

    def log_density(self, t, x, u):
        p = self.probs(t, int(np.asarray(x).ravel()[0]))[int(np.asarray(u).ravel()[0])]
        return float(np.log(p)) if p > 0 else -np.inf


@dataclass(frozen=True)
class CostModel:
    """Additive path cost ``sum_t C_t(x_t, u_t) + C_T(x_T)``.

    Both callables act on batches and return ``(n,)`` arrays.  ``np.inf``
    marks a forbidden path.
    """

    stage: Callable[[int, np.ndarray, np.ndarray], np.ndarray]
    terminal: Callable[[np.ndarray], np.ndarray]


def zero_cost() -> CostModel:
    return CostModel(stage=lambda t, X, U: np.zeros(len(X)),
                     terminal=lambda X: np.zeros(len(X)))


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray    # (T + 1, state_dim)
    controls: np.ndarray  # (T, control_dim)
    path_cost: float
    start: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def horizon(self) -> int:
        return len(self.controls)


def _check(dyn: DeterministicDynamics, x, u=None):
    x = np.asarray(x, dtype=float)
    if x.shape != (dyn.state_dim,):
        raise ConfigurationError(f"state has shape {x.shape}, expected ({dyn.state_dim},)")
    if u is None:
        return x
    u = np.asarray(u, dtype=float)
    if u.shape != (dyn.control_dim,):
        raise ConfigurationError(f"control has shape {u.shape}, expected ({dyn.control_dim},)")
    return x, u


def step(dyn: DeterministicDynamics, t: int, x, u) -> np.ndarray:
    if not 0 <= t < dyn.horizon:
        raise ConfigurationError(f"time index {t} outside [0, {dyn.horizon})")
    x, u = _check(dyn, x, u)
    return dyn.step_batch(t, x[None, :], u[None, :])[0]


def path_cost(costs: CostModel, traj: Trajectory, start: int | None = None) -> float:
    """Tail cost ``C_{start:T}`` of ``traj`` (the full cost when ``start`` is None).

    ``start`` is an absolute time index; ``traj.start`` is where the stored
    states begin.
    """
    s = traj.start if start is None else start
    off = s - traj.start
    if not 0 <= off <= traj.horizon:
        raise ConfigurationError(f"start {s} outside trajectory span")
    total = 0.0
    for k in range(off, traj.horizon):
        total += float(costs.stage(traj.start + k, traj.states[k:k + 1], traj.controls[k:k + 1])[0])
    return total + float(costs.terminal(traj.states[-1:])[0])


def simulate(dyn: DeterministicDynamics, costs: CostModel, x0, controls, start: int = 0) -> Trajectory:
    """Roll ``controls`` forward from ``x0`` at time ``start`` and price the path."""
    x0 = _check(dyn, x0)
    controls = np.asarray(controls, dtype=float).reshape(-1, dyn.control_dim)
    states = np.empty((len(controls) + 1, dyn.state_dim))
    states[0] = x0
    for k, u in enumerate(controls):
        states[k + 1] = dyn.step_batch(start + k, states[k:k + 1], u[None, :])[0]
    traj = Trajectory(states, controls, 0.0, start)
    return Trajectory(states, controls, path_cost(costs, traj), start)


def sample_reference(pol: StochasticPolicy, t: int, x, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return pol.transform(t, x[None, :], pol.draw_noise(rng, 1))[0]
