"""Unicycle navigation benchmark and run configuration.

The agent starts at the origin and is asked to reach a goal disk at
``(45, 0)``.  The supervisor's reference policy is a Gaussian around a
proportional speed/heading controller; the agent pays one unit of cost for
every pose spent inside the fire regions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import tomli
import tomli_w
from numba import njit

from . import rng as streams
from .model import CostModel, DeterministicDynamics, GaussianPolicy
from ._vmath import atan2, sincos
from .rng import normal_pair


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


@dataclass(frozen=True)
class Rect:
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def contains(self, px, py):
        return (px >= self.xmin) & (px <= self.xmax) & (py >= self.ymin) & (py <= self.ymax)

    def shifted(self, dx, dy):
        return Rect(self.xmin + dx, self.xmax + dx, self.ymin + dy, self.ymax + dy)


@dataclass(frozen=True)
class Disk:
    cx: float
    cy: float
    r: float

    def contains(self, px, py):
        return (px - self.cx) ** 2 + (py - self.cy) ** 2 <= self.r ** 2

    def shifted(self, dx, dy):
        return Disk(self.cx + dx, self.cy + dy, self.r)


# Calibrated so that about 4% of reference-policy paths stay out of the fire.
DEFAULT_FIRE = (
    Rect(8.0, 30.0, 0.0, 30.0),
    Rect(8.0, 30.0, -30.0, -2.0),
)


@dataclass(frozen=True)
class UnicycleScenario:
    goal: tuple[float, float] = (45.0, 0.0)
    goal_radius: float = 2.5
    k_a: float = 0.1
    k_omega: float = 0.2
    sigma: tuple[tuple[float, float], tuple[float, float]] = ((0.5, 0.0), (0.0, 0.5))
    h: float = 1.0
    horizon: int = 50
    x0: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    fire: tuple = DEFAULT_FIRE

    def __post_init__(self):
        validate_scenario(self)

    def problem(self):
        """``(dynamics, reference policy, cost model)`` for this scenario."""
        return unicycle_dynamics(self), reference_policy(self), fire_cost(self)

    def in_fire(self, px, py):
        px = np.asarray(px, dtype=float)
        py = np.asarray(py, dtype=float)
        hit = np.zeros(np.broadcast(px, py).shape, dtype=bool)
        for region in self.fire:
            hit |= region.contains(px, py)
        return hit

    def shifted(self, dx: float, dy: float) -> "UnicycleScenario":
        return replace(self, goal=(self.goal[0] + dx, self.goal[1] + dy),
                       x0=(self.x0[0] + dx, self.x0[1] + dy, self.x0[2], self.x0[3]),
                       fire=tuple(r.shifted(dx, dy) for r in self.fire))


def validate_scenario(sc: UnicycleScenario) -> None:
    if sc.horizon < 0:
        raise ConfigError("scenario.horizon: must be >= 0")
    if not sc.goal_radius > 0:
        raise ConfigError("scenario.goal_radius: must be positive")
    if not sc.h > 0:
        raise ConfigError("scenario.h: must be positive")
    cov = np.asarray(sc.sigma, dtype=float)
    if cov.shape != (2, 2):
        raise ConfigError("scenario.sigma: must be a 2x2 matrix")
    if not np.allclose(cov, cov.T) or np.linalg.eigvalsh(cov).min() <= 0:
        raise ConfigError("scenario.sigma: must be symmetric positive definite")
    if len(sc.x0) != 4 or len(sc.goal) != 2:
        raise ConfigError("scenario.x0 / scenario.goal: wrong length")
    for k, r in enumerate(sc.fire):
        if isinstance(r, Rect) and not (r.xmin <= r.xmax and r.ymin <= r.ymax):
            raise ConfigError(f"scenario.fire[{k}].rect: min must not exceed max")
        if isinstance(r, Disk) and not r.r >= 0:
            raise ConfigError(f"scenario.fire[{k}].disk.r: must be non-negative")


def _region_arrays(sc: UnicycleScenario):
    rects = np.array([[r.xmin, r.xmax, r.ymin, r.ymax] for r in sc.fire if isinstance(r, Rect)],
                     dtype=float).reshape(-1, 4)
    disks = np.array([[d.cx, d.cy, d.r] for d in sc.fire if isinstance(d, Disk)],
                     dtype=float).reshape(-1, 3)
    return rects, disks


@njit(nogil=True, cache=True, error_model="numpy")
def _mark_fire(px, py, rects, disks, hit):
    m = px.shape[0]
    for j in range(m):
        hit[j] = 0.0
    for r in range(rects.shape[0]):
        x0, x1, y0, y1 = rects[r, 0], rects[r, 1], rects[r, 2], rects[r, 3]
        for j in range(m):
            inside = (px[j] >= x0) & (px[j] <= x1) & (py[j] >= y0) & (py[j] <= y1)
            hit[j] = 1.0 if inside else hit[j]
    for r in range(disks.shape[0]):
        cx, cy, rr = disks[r, 0], disks[r, 1], disks[r, 2] * disks[r, 2]
        for j in range(m):
            dx = px[j] - cx
            dy = py[j] - cy
            hit[j] = 1.0 if dx * dx + dy * dy <= rr else hit[j]


@njit(nogil=True, cache=True, error_model="numpy")
def _mean_controls(k, T, gx, gy, ka, kw, px, py, s, th, ma, mw):
    inv = 1.0 / (T - k)
    for j in range(px.shape[0]):
        dx = gx - px[j]
        dy = gy - py[j]
        s_des = np.sqrt(dx * dx + dy * dy) * inv
        th_des = atan2(dy, dx)
        th_des = th[j] if (dx == 0.0) & (dy == 0.0) else th_des
        ma[j] = -ka * (s[j] - s_des)
        mw[j] = -kw * (th[j] - th_des)


@njit(nogil=True, cache=True, error_model="numpy")
def _advance(h, px, py, s, th, a, w):
    for j in range(px.shape[0]):
        sn, cs = sincos(th[j])
        px[j] = px[j] + s[j] * cs * h
        py[j] = py[j] + s[j] * sn * h
        s[j] = s[j] + a[j] * h
        th[j] = th[j] + w[j] * h


@njit(nogil=True, cache=True, error_model="numpy")
def _perturb(k, i0, t0, c3, k0, k1, L, ma, mw):
    # ma, mw become a = ma + L[0] z, w = mw + L[1] z in place
    L00, L01, L10, L11 = L[0, 0], L[0, 1], L[1, 0], L[1, 1]
    c0 = np.uint64(k)
    c2 = np.uint64(t0)
    for j in range(ma.shape[0]):
        z0, z1 = normal_pair(c0, np.uint64(i0 + j), c2, c3, k0, k1)
        ma[j] = ma[j] + (z0 * L00 + z1 * L01)
        mw[j] = mw[j] + (z0 * L10 + z1 * L11)


_CHUNK = 2048


@njit(nogil=True, cache=True, error_model="numpy")
def _unicycle_tails(x0, t0, T, h, gx, gy, ka, kw, L, rects, disks, n, k0, k1, c3, first, cost):
    px = np.empty(_CHUNK)
    py = np.empty(_CHUNK)
    s = np.empty(_CHUNK)
    th = np.empty(_CHUNK)
    a = np.empty(_CHUNK)
    w = np.empty(_CHUNK)
    hit = np.empty(_CHUNK)
    c = np.empty(_CHUNK)
    for i0 in range(0, n, _CHUNK):
        m = min(_CHUNK, n - i0)
        px_, py_, s_, th_ = px[:m], py[:m], s[:m], th[:m]
        a_, w_, hit_, c_ = a[:m], w[:m], hit[:m], c[:m]
        px_[:] = x0[0]
        py_[:] = x0[1]
        s_[:] = x0[2]
        th_[:] = x0[3]
        _mark_fire(px_, py_, rects, disks, c_)
        for k in range(t0, T):
            _mean_controls(k, T, gx, gy, ka, kw, px_, py_, s_, th_, a_, w_)
            _perturb(k, i0, t0, c3, k0, k1, L, a_, w_)
            if k == t0:
                first[i0:i0 + m, 0] = a_
                first[i0:i0 + m, 1] = w_
            _advance(h, px_, py_, s_, th_, a_, w_)
            _mark_fire(px_, py_, rects, disks, hit_)
            for j in range(m):
                c_[j] += hit_[j]
        cost[i0:i0 + m] = c_


class UnicycleDynamics(DeterministicDynamics):
    """``(P^X, P^Y, S, Theta)`` driven by ``(A, Omega)``; the heading is never wrapped."""

    state_dim = 4
    control_dim = 2

    def __init__(self, scenario: UnicycleScenario):
        self.scenario = scenario
        self.horizon = scenario.horizon
        self.h = scenario.h

    def step_batch(self, t, X, U):
        cols = [np.array(X[:, j], dtype=float) for j in range(4)]
        _advance(self.h, *cols, np.ascontiguousarray(U[:, 0], dtype=float),
                 np.ascontiguousarray(U[:, 1], dtype=float))
        return np.stack(cols, axis=1)


class UnicyclePolicy(GaussianPolicy):
    """Gaussian reference around the proportional speed/heading controller."""

    def __init__(self, scenario: UnicycleScenario):
        self.scenario = scenario
        super().__init__(self._mean, np.asarray(scenario.sigma, dtype=float))

    def desired(self, t, X):
        """``(S^desired, Theta^desired)``; at the goal centre the heading target is the current heading."""
        sc = self.scenario
        X = np.atleast_2d(X)
        if not t < sc.horizon:
            raise ValueError("reference policy is only defined for t < T")
        dx = sc.goal[0] - X[:, 0]
        dy = sc.goal[1] - X[:, 1]
        s_des = np.sqrt(dx * dx + dy * dy) / (sc.horizon - t)
        at_goal = (dx == 0.0) & (dy == 0.0)
        th_des = np.where(at_goal, X[:, 3], np.arctan2(dy, dx))
        return s_des, th_des

    def _mean(self, t, X):
        sc = self.scenario
        if not t < sc.horizon:
            raise ValueError("reference policy is only defined for t < T")
        cols = [np.ascontiguousarray(X[:, j], dtype=float) for j in range(4)]
        ma = np.empty(len(X))
        mw = np.empty(len(X))
        _mean_controls(t, sc.horizon, sc.goal[0], sc.goal[1], sc.k_a, sc.k_omega, *cols, ma, mw)
        return np.stack([ma, mw], axis=1)

    def fused_rollout(self, dyn, costs, t, x_t, n, stream):
        """Compiled tails for the matching dynamics and fire cost, else ``None``."""
        sc = self.scenario
        if not (isinstance(dyn, UnicycleDynamics) and dyn.scenario == sc
                and getattr(costs, "scenario", None) == sc):
            return None
        rects, disks = _region_arrays(sc)
        first = np.empty((n, 2))
        cost = np.empty(n)
        k0, k1 = stream.key
        _unicycle_tails(np.asarray(x_t, dtype=float), t, sc.horizon, sc.h, sc.goal[0], sc.goal[1],
                        sc.k_a, sc.k_omega, self.chol, rects, disks, n, k0, k1,
                        streams.tag(streams.ROLLOUT, stream.episode), first, cost)
        return first, cost


@dataclass(frozen=True)
class FireCost(CostModel):
    scenario: UnicycleScenario = None


def unicycle_dynamics(scenario: UnicycleScenario) -> UnicycleDynamics:
    return UnicycleDynamics(scenario)


def reference_policy(scenario: UnicycleScenario) -> UnicyclePolicy:
    return UnicyclePolicy(scenario)


def fire_cost(scenario: UnicycleScenario) -> FireCost:
    """Indicator of the position lying in a (closed) fire region, at every t = 0..T."""
    def stage(t, X, U):
        return scenario.in_fire(X[:, 0], X[:, 1]).astype(float)

    def terminal(X):
        return scenario.in_fire(X[:, 0], X[:, 1]).astype(float)

    return FireCost(stage, terminal, scenario)


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class RunConfig:
    scenario: UnicycleScenario = field(default_factory=UnicycleScenario)
    lam: float = 0.5
    samples: int = 100_000
    episodes: int = 100
    seed: int = 0
    out_dir: str = "out"

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError("run.lambda: λ must be positive")
        if self.samples < 1:
            raise ConfigError("run.samples: must be >= 1")
        if self.episodes < 1:
            raise ConfigError("run.episodes: must be >= 1")
        if not 0 <= self.seed < 2 ** 63:
            raise ConfigError("run.seed: must be in [0, 2**63)")


_SCENARIO_KEYS = {"goal", "goal_radius", "k_a", "k_omega", "sigma", "h", "horizon", "x0", "fire"}
_RUN_KEYS = {"lambda": "lam", "samples": "samples", "episodes": "episodes",
             "seed": "seed", "out_dir": "out_dir"}


def _region(k, spec):
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError(f"scenario.fire[{k}]: expected exactly one of 'rect' or 'disk'")
    (kind, body), = spec.items()
    fields = {"rect": ("xmin", "xmax", "ymin", "ymax"), "disk": ("cx", "cy", "r")}.get(kind)
    if fields is None:
        raise ConfigError(f"scenario.fire[{k}]: unknown region kind {kind!r}")
    if not isinstance(body, dict) or set(body) != set(fields):
        raise ConfigError(f"scenario.fire[{k}].{kind}: expected keys {', '.join(fields)}")
    vals = [float(body[f]) for f in fields]
    return Rect(*vals) if kind == "rect" else Disk(*vals)


def _scenario_from_dict(d: dict) -> UnicycleScenario:
    unknown = set(d) - _SCENARIO_KEYS
    if unknown:
        raise ConfigError(f"scenario: unknown keys {sorted(unknown)}")
    kw = {}
    try:
        for key in ("goal_radius", "k_a", "k_omega", "h"):
            if key in d:
                kw[key] = float(d[key])
        if "horizon" in d:
            kw["horizon"] = int(d["horizon"])
        if "goal" in d:
            kw["goal"] = tuple(float(v) for v in d["goal"])
        if "x0" in d:
            kw["x0"] = tuple(float(v) for v in d["x0"])
        if "sigma" in d:
            kw["sigma"] = tuple(tuple(float(v) for v in row) for row in d["sigma"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scenario: {exc}") from exc
    if "fire" in d:
        kw["fire"] = tuple(_region(k, r) for k, r in enumerate(d["fire"]))
    return UnicycleScenario(**kw)


def config_from_dict(data: dict) -> RunConfig:
    unknown = set(data) - {"scenario", "run"}
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    run = dict(data.get("run", {}))
    bad = set(run) - set(_RUN_KEYS)
    if bad:
        raise ConfigError(f"run: unknown keys {sorted(bad)}")
    kw = {_RUN_KEYS[k]: v for k, v in run.items()}
    for key, typ in (("lam", float), ("samples", int), ("episodes", int), ("seed", int), ("out_dir", str)):
        if key in kw:
            try:
                kw[key] = typ(kw[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"run.{key}: {exc}") from exc
    return RunConfig(scenario=_scenario_from_dict(data.get("scenario", {})), **kw)


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc
    return config_from_dict(data)


def config_to_dict(cfg: RunConfig) -> dict:
    sc = cfg.scenario
    fire = []
    for r in sc.fire:
        if isinstance(r, Rect):
            fire.append({"rect": {"xmin": r.xmin, "xmax": r.xmax, "ymin": r.ymin, "ymax": r.ymax}})
        else:
            fire.append({"disk": {"cx": r.cx, "cy": r.cy, "r": r.r}})
    return {
        "scenario": {
            "goal": list(sc.goal), "goal_radius": sc.goal_radius, "k_a": sc.k_a,
            "k_omega": sc.k_omega, "sigma": [list(row) for row in sc.sigma], "h": sc.h,
            "horizon": sc.horizon, "x0": list(sc.x0), "fire": fire,
        },
        "run": {"lambda": cfg.lam, "samples": cfg.samples, "episodes": cfg.episodes,
                "seed": cfg.seed, "out_dir": cfg.out_dir},
    }


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(tomli_w.dumps(config_to_dict(cfg)))
