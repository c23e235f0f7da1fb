"""Synthetic policy environment.

Supplies rollout rewards and surrogate learning dynamics so curriculum
behavior (frontier tracking, advantage magnitude) can be verified without
a language model. The modeling axiom, stated up front: per-prompt success
probability is a logistic function of (skill - latent difficulty), and
skill improves in proportion to the realized within-group reward variance
of the prompts that were selected for training. Informative selection is
therefore genuinely advantageous inside the simulator, which is the
precondition for comparing curricula at all.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from . import rng as rngmod
from .core import DomainError, Prompt, RolloutGroup, RunConfig

# Success probabilities are kept strictly inside (0,1) so Beta shape
# parameters stay valid in continuous-reward mode.
_P_EPS = 1e-12

POOL_PRESETS = {
    # target: mean success probability of the fresh pool under skill 0.
    # spread: stddev of latent difficulties (in units of difficulty_scale).
    "hard": {"target": 0.05, "spread": 2.0},
    "easy": {"target": 0.75, "spread": 3.0},
}

N_CATEGORIES = 10


@dataclass(frozen=True)
class SyntheticPolicy:
    """Scalar (or per-category) competence with logistic success curves."""

    skill: np.ndarray  # shape () for a single scalar skill, (C,) per category
    skill_lr: float = 0.2
    difficulty_scale: float = 1.0
    reward_mode: str = "binary"
    concentration: float = 8.0

    def __post_init__(self):
        if self.difficulty_scale <= 0:
            raise DomainError("difficulty_scale must be positive")
        if self.concentration <= 0:
            raise DomainError("concentration must be positive")

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "SyntheticPolicy":
        sim = cfg.sim
        skill = (
            np.full(N_CATEGORIES, float(sim.skill_init))
            if sim.per_category_skill
            else np.asarray(float(sim.skill_init))
        )
        return cls(
            skill=skill,
            skill_lr=sim.skill_lr,
            difficulty_scale=sim.difficulty_scale,
            reward_mode=cfg.reward_mode,
            concentration=sim.concentration,
        )

    def skill_for(self, prompt: Prompt) -> float:
        if self.skill.ndim == 0:
            return float(self.skill)
        return float(self.skill[prompt.category])

    @property
    def mean_skill(self) -> float:
        return float(np.mean(self.skill))


def success_prob(policy: SyntheticPolicy, prompt: Prompt) -> float:
    """logistic((skill - latent_difficulty) / difficulty_scale), in (0,1)."""
    z = (policy.skill_for(prompt) - prompt.latent_difficulty) / policy.difficulty_scale
    return float(np.clip(expit(z), _P_EPS, 1.0 - _P_EPS))


def sample_rewards(
    policy: SyntheticPolicy, prompt: Prompt, n: int, rng: np.random.Generator
) -> np.ndarray:
    """n rewards in [0,1]: Bernoulli(p) draws, or Beta draws with mean p
    and the configured concentration in continuous mode."""
    p = success_prob(policy, prompt)
    if policy.reward_mode == "binary":
        return (rng.random(n) < p).astype(float)
    kappa = policy.concentration
    return rng.beta(p * kappa, (1.0 - p) * kappa, size=n)


def true_variance(policy: SyntheticPolicy, prompt: Prompt) -> float:
    """Population reward variance for this prompt under the current policy."""
    p = success_prob(policy, prompt)
    v = p * (1.0 - p)
    if policy.reward_mode == "continuous":
        v = v / (policy.concentration + 1.0)
    return v


def policy_update(policy: SyntheticPolicy, outcomes: Sequence) -> SyntheticPolicy:
    """Skill rises by skill_lr times the mean realized variance of the batch.

    Saturated prompts (all rollouts agree) contribute nothing; per-category
    skill applies the same rule within each category present in the batch.
    """
    if not outcomes:
        return policy
    if policy.skill.ndim == 0:
        mean_v = float(np.mean([o.group.empirical_variance for o in outcomes]))
        return replace(policy, skill=np.asarray(float(policy.skill) + policy.skill_lr * mean_v))
    skill = policy.skill.copy()
    by_cat: dict[int, list[float]] = {}
    for o in outcomes:
        by_cat.setdefault(o.prompt.category, []).append(o.group.empirical_variance)
    for cat, vs in by_cat.items():
        skill[cat] += policy.skill_lr * float(np.mean(vs))
    return replace(policy, skill=skill)


@dataclass
class PromptOutcome:
    """One selected prompt's realized rollout group (plus, in simulation,
    the population variance at rollout time)."""

    prompt: Prompt
    group: RolloutGroup
    true_variance: float | None = None


class SimEnvironment:
    """Binds a prompt pool, a synthetic policy, and the run's RNG streams.

    Reward draws are keyed by (iteration, prompt id): two strategies that
    select the same prompt at the same iteration see identical rewards.
    Observables are the latent difficulty corrupted by Gaussian noise,
    fixed per prompt for the whole run; selectors never see the latent
    difficulty itself.
    """

    def __init__(self, prompts: Sequence[Prompt], config: RunConfig):
        self.config = config
        self.prompts = list(prompts)
        self.policy = SyntheticPolicy.from_config(config)
        obs_rng = rngmod.substream(config.seed, rngmod.OBSERVABLES)
        noise = obs_rng.normal(0.0, config.sim.obs_noise, size=len(self.prompts))
        # Noisy difficulty is standardized within the pool (predictors see a
        # well-conditioned feature, never the raw latent value) and the
        # public category label rides along as a one-hot block.
        diffs = np.array([p.latent_difficulty for p in self.prompts])
        loc = float(diffs.mean())
        scale = float(diffs.std()) or 1.0
        self._observables = {}
        for i, p in enumerate(sorted(self.prompts, key=lambda q: q.id)):
            onehot = np.zeros(N_CATEGORIES)
            onehot[p.category] = 1.0
            z = (p.latent_difficulty + noise[i] - loc) / scale
            self._observables[p.id] = np.concatenate([[z], onehot])

    @property
    def obs_dim(self) -> int:
        return 1 + N_CATEGORIES

    def observables(self, prompt: Prompt) -> np.ndarray:
        return self._observables[prompt.id]

    def rollout_group(self, prompt: Prompt, iteration: int) -> RolloutGroup:
        stream = rngmod.reward_stream(self.config.seed, iteration, prompt.id)
        rewards = sample_rewards(self.policy, prompt, self.config.n, stream)
        return RolloutGroup.from_rewards(prompt.id, rewards)

    def probe_rewards(self, prompt: Prompt, count: int, rng: np.random.Generator) -> np.ndarray:
        """Extra rollouts outside the training reward streams (difficulty probes)."""
        return sample_rewards(self.policy, prompt, count, rng)

    def true_variance(self, prompt: Prompt) -> float:
        return true_variance(self.policy, prompt)

    def success_prob(self, prompt: Prompt) -> float:
        return success_prob(self.policy, prompt)

    def apply_policy_update(self, outcomes: Sequence[PromptOutcome]) -> None:
        self.policy = policy_update(self.policy, outcomes)

    @property
    def skill(self) -> float:
        return self.policy.mean_skill


# --------------------------------------------------------------------------
# Pool generation and the plain-text pool file
# --------------------------------------------------------------------------


def generate_pool(
    preset: str,
    size: int,
    seed: int,
    difficulty_scale: float = 1.0,
    skill: float = 0.0,
) -> list[Prompt]:
    """Draw a pool whose mean success probability under the given initial
    skill matches the preset target (shifting a fixed Gaussian shape).

    Categories are assigned uniformly at random, independent of difficulty,
    so per-category competence and difficulty stay distinct axes.
    """
    if preset not in POOL_PRESETS:
        raise DomainError(f"unknown pool preset {preset!r}; choose from {sorted(POOL_PRESETS)}")
    if size < 1:
        raise DomainError("pool size must be >= 1")
    spec = POOL_PRESETS[preset]
    stream = rngmod.substream(seed, rngmod.POOL_GEN)
    raw = stream.normal(0.0, spec["spread"] * difficulty_scale, size=size)

    def mean_success(shift: float) -> float:
        return float(np.mean(expit((skill - (raw + shift)) / difficulty_scale)))

    lo, hi = -60.0 * difficulty_scale, 60.0 * difficulty_scale
    shift = brentq(lambda c: mean_success(c) - spec["target"], lo, hi, xtol=1e-10)
    difficulties = raw + shift
    category = stream.integers(0, N_CATEGORIES, size=size)
    return [
        Prompt(id=i, text="", category=int(category[i]), latent_difficulty=float(difficulties[i]))
        for i in range(size)
    ]


def save_pool(prompts: Iterable[Prompt], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "category", "difficulty"])
        for p in prompts:
            writer.writerow([p.id, p.category, repr(p.latent_difficulty)])


def load_pool(path: str | Path) -> list[Prompt]:
    prompts = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            prompts.append(
                Prompt(
                    id=int(row["id"]),
                    text=row.get("text", "") or "",
                    category=int(row["category"]),
                    latent_difficulty=float(row["difficulty"]),
                )
            )
    seen = [p.id for p in prompts]
    if len(set(seen)) != len(seen):
        raise DomainError(f"duplicate prompt ids in pool file {path}")
    return prompts
