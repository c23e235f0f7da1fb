"""Named RNG substreams fanned out from one root seed.

Every stochastic component draws from its own substream so that switching
the selection strategy never perturbs the reward draws for the prompts it
ends up selecting. Reward streams are additionally keyed by (iteration,
prompt id): two strategies that select the same prompt at the same
iteration observe the same rollout rewards.
"""

from __future__ import annotations

import numpy as np

# Substream identifiers. New streams get new ids; never renumber existing
# ones, or old seeds stop reproducing.
POOL = 0
JUDGE = 1
REWARDS = 2
STRATEGY = 3
PROBE = 4
OBSERVABLES = 5
POOL_GEN = 6


def substream(seed: int, *key: int) -> np.random.Generator:
    """Return a generator for the substream identified by ``key``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))


def reward_stream(seed: int, iteration: int, prompt_id: int) -> np.random.Generator:
    return substream(seed, REWARDS, iteration, prompt_id)
