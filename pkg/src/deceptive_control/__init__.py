"""Optimal deceptive control of deterministic systems under a stochastic reference policy."""

from .model import (ConfigurationError, CostModel, DeterministicDynamics, GaussianPolicy,
                    StochasticPolicy, Trajectory, path_cost, sample_reference, simulate, step)
from .rng import Stream
from .sampler import (EpisodeRecord, NoAdmissibleRollout, RolloutBatch, WeightTable,
                      build_weight_table, deceptive_action, estimate_Z, rollout_batch,
                      run_episode, run_episodes, select_action)

__all__ = [
    "ConfigurationError", "CostModel", "DeterministicDynamics", "GaussianPolicy",
    "StochasticPolicy", "Trajectory", "path_cost", "sample_reference", "simulate", "step",
    "Stream", "EpisodeRecord", "NoAdmissibleRollout", "RolloutBatch", "WeightTable",
    "build_weight_table", "deceptive_action", "estimate_Z", "rollout_batch", "run_episode",
    "run_episodes", "select_action",
]
