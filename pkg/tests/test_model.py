import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deceptive_control.model import (ConfigurationError, FunctionDynamics, GaussianPolicy,
                                     Trajectory, path_cost, sample_reference, simulate, step,
                                     zero_cost)
from deceptive_control.scenarios import Rect, UnicycleScenario, fire_cost


class TestStep:
    def test_coasting_forward(self, unicycle):
        dyn, _, _ = unicycle
        np.testing.assert_array_equal(step(dyn, 0, [0, 0, 1, 0], [0, 0]), [1, 0, 1, 0])

    @pytest.mark.parametrize("theta", [0.0, 1.3, -2.0, 7.5])
    def test_at_rest_stays_put(self, unicycle, theta):
        dyn, _, _ = unicycle
        np.testing.assert_array_equal(step(dyn, 3, [0, 0, 0, theta], [0, 0]), [0, 0, 0, theta])

    def test_heading_north_with_acceleration(self, unicycle):
        dyn, _, _ = unicycle
        out = step(dyn, 0, [0, 0, 2, np.pi / 2], [1, 0])
        np.testing.assert_allclose(out, [0, 2, 3, np.pi / 2], atol=1e-15)

    def test_step_size_scales_update(self):
        dyn, _, _ = UnicycleScenario(h=0.5).problem()
        np.testing.assert_allclose(step(dyn, 0, [1, 1, 2, 0], [2, 1]), [2, 1, 3, 0.5])

    def test_heading_not_wrapped(self, unicycle):
        dyn, _, _ = unicycle
        assert step(dyn, 0, [0, 0, 0, 3.0], [0, 1.0])[3] == 4.0

    @pytest.mark.parametrize("x,u", [([0, 0, 0], [0, 0]), ([0, 0, 0, 0], [0])])
    def test_dimension_mismatch(self, unicycle, x, u):
        with pytest.raises(ConfigurationError):
            step(unicycle[0], 0, x, u)

    def test_time_out_of_range(self, unicycle):
        with pytest.raises(ConfigurationError):
            step(unicycle[0], 50, [0, 0, 0, 0], [0, 0])


class TestPathCost:
    def test_zero_cost(self, unicycle, rng):
        dyn, _, _ = unicycle
        traj = simulate(dyn, zero_cost(), [0, 0, 1, 0.2], rng.normal(size=(50, 2)))
        assert traj.path_cost == 0.0

    def test_fire_never_entered(self, unicycle):
        dyn, _, costs = unicycle
        # stand still at the origin, well clear of the default fire regions
        traj = simulate(dyn, costs, [0, 0, 0, 0], np.zeros((50, 2)))
        assert traj.path_cost == 0.0

    def test_three_poses_inside(self):
        sc = UnicycleScenario(horizon=5, fire=(Rect(1.5, 3.5, -1, 1),))
        dyn, _, costs = sc.problem()
        # unit speed along x: poses at x = 0, 1, 2, 3, 4, 5 -> x = 2, 3 inside ... plus
        traj = simulate(dyn, costs, [0, 0, 1, 0], np.zeros((5, 2)))
        assert traj.path_cost == 2.0
        sc = UnicycleScenario(horizon=5, fire=(Rect(1.5, 4.0, -1, 1),))
        dyn, _, costs = sc.problem()
        traj = simulate(dyn, costs, [0, 0, 1, 0], np.zeros((5, 2)))
        assert traj.path_cost == 3.0

    def test_tail_cost(self):
        sc = UnicycleScenario(horizon=5, fire=(Rect(1.5, 4.0, -1, 1),))
        dyn, _, costs = sc.problem()
        traj = simulate(dyn, costs, [0, 0, 1, 0], np.zeros((5, 2)))
        assert [path_cost(costs, traj, s) for s in range(6)] == [3, 3, 3, 2, 1, 0]

    def test_infinite_cost_marks_forbidden(self):
        dyn = FunctionDynamics(lambda t, X, U: X + U, 1, 1, 2)
        costs = zero_cost().__class__(stage=lambda t, X, U: np.where(U[:, 0] > 0, np.inf, 0.0),
                                      terminal=lambda X: np.zeros(len(X)))
        assert simulate(dyn, costs, [0.0], [[1.0], [0.0]]).path_cost == math.inf


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), start=st.integers(0, 49))
def test_trajectory_restep_and_cost_recomputation(seed, start):
    sc = UnicycleScenario()
    dyn, _, costs = sc.problem()
    rng = np.random.default_rng(seed)
    controls = rng.normal(scale=0.7, size=(50 - start, 2))
    traj = simulate(dyn, costs, [rng.uniform(0, 20), rng.uniform(-5, 5), 1.0, 0.1], controls, start)
    x = traj.states[0]
    for k, u in enumerate(controls):
        x = step(dyn, start + k, x, u)
        assert np.array_equal(x, traj.states[k + 1])
    assert path_cost(costs, traj) == pytest.approx(traj.path_cost, rel=1e-12, abs=0)


class TestSampleReference:
    def test_degenerate_gaussian_returns_mean(self, rng):
        pol = GaussianPolicy(lambda t, X: np.tile([0.3, -1.2], (len(X), 1)), 1e-12 * np.eye(2))
        np.testing.assert_allclose(sample_reference(pol, 0, [0.0], rng), [0.3, -1.2], atol=1e-4)

    def test_variance_below_floor_rejected(self):
        with pytest.raises(ConfigurationError):
            GaussianPolicy(lambda t, X: np.zeros((len(X), 1)), [[1e-13]])

    def test_cloned_streams_agree(self):
        pol = GaussianPolicy(lambda t, X: np.zeros((len(X), 2)), 0.5 * np.eye(2))
        a = np.random.default_rng(9)
        b = np.random.default_rng(9)
        np.testing.assert_array_equal(sample_reference(pol, 0, [0.0], a), sample_reference(pol, 0, [0.0], b))

    def test_law_of_large_numbers(self):
        pol = GaussianPolicy(lambda t, X: np.zeros((len(X), 2)), 0.5 * np.eye(2))
        rng = np.random.default_rng(3)
        draws = pol.transform(0, np.zeros((100_000, 1)), pol.draw_noise(rng, 100_000))
        assert np.abs(draws.mean(axis=0)).max() < 0.02
        np.testing.assert_allclose(draws.var(axis=0), 0.5, rtol=0.05)


class TestGaussianDensity:
    def test_integrates_to_one(self):
        pol = GaussianPolicy(lambda t, X: np.full((len(X), 1), 0.7), [[0.3]])
        grid = np.linspace(-6, 8, 20001)
        dens = np.exp([pol.log_density(0, [0.0], [u]) for u in grid])
        assert abs(np.trapezoid(dens, grid) - 1.0) < 1e-3

    def test_histogram_matches_density(self):
        pol = GaussianPolicy(lambda t, X: np.full((len(X), 1), -0.4), [[1.7]])
        rng = np.random.default_rng(5)
        draws = pol.transform(0, np.zeros((200_000, 1)), pol.draw_noise(rng, 200_000))[:, 0]
        edges = np.linspace(-5, 4, 46)
        hist, _ = np.histogram(draws, edges, density=False)
        mids = 0.5 * (edges[1:] + edges[:-1])
        expected = np.exp([pol.log_density(0, [0.0], [m]) for m in mids]) * np.diff(edges) * len(draws)
        # Poisson noise per bin, plus midpoint-rule curvature error
        assert np.all(np.abs(hist - expected) < 5 * np.sqrt(expected) + 0.01 * expected)

    def test_two_dimensional_log_density(self):
        cov = np.array([[0.5, 0.1], [0.1, 0.3]])
        pol = GaussianPolicy(lambda t, X: np.tile([1.0, 2.0], (len(X), 1)), cov)
        u = np.array([0.4, 2.5])
        r = u - [1.0, 2.0]
        ref = -0.5 * r @ np.linalg.solve(cov, r) - np.log(2 * np.pi) - 0.5 * np.log(np.linalg.det(cov))
        assert pol.log_density(0, [0.0], u) == pytest.approx(ref, rel=1e-12)


def test_trajectory_dataclass_horizon():
    t = Trajectory(np.zeros((4, 2)), np.zeros((3, 1)), 0.0)
    assert t.horizon == 3
