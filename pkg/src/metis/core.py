"""Domain types and the closed-form math of the scheduler.

Group-relative advantages, within-group reward variance, the clipped
surrogate objective, the calibration reward for self-judgment, and the
joint-loss combiner. Everything here is a pure function over immutable
inputs; callers may invoke them concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Rewards in [0,1] bound the within-group variance by 1/4, attained at a
# Bernoulli(1/2) outcome.
VARIANCE_MAX = 0.25

REWARD_MODES = ("binary", "continuous")
STRATEGIES = ("metis", "uniform", "oracle", "sec", "adcl", "pcl")


class InvalidGroupError(ValueError):
    """Rollout group is empty or has fewer than two samples."""


class DomainError(ValueError):
    """A scalar argument lies outside its admissible range."""


class ShapeError(ValueError):
    """Vector arguments disagree in length or dimension."""


@dataclass(frozen=True)
class Prompt:
    """Pool item. ``latent_difficulty`` exists only for the simulator;
    selectors and predictors must never read it."""

    id: int
    text: str = ""
    category: int = 0
    latent_difficulty: float = 0.0


def compute_advantages(rewards) -> tuple[float, np.ndarray]:
    """Center rewards on their group mean.

    No standard-deviation normalization is applied: each advantage is
    simply reward minus group mean.
    """
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise InvalidGroupError(f"need at least 2 rewards in one group, got {r.size}")
    if np.any(r < 0.0) or np.any(r > 1.0):
        raise DomainError("rewards must lie in [0, 1]")
    mean = float(r.mean())
    return mean, r - mean


def empirical_variance(advantages) -> float:
    """Mean squared advantage: the within-group reward variance (divisor n)."""
    a = np.asarray(advantages, dtype=float)
    if a.size == 0:
        raise InvalidGroupError("empty advantage list")
    return float(np.mean(a * a))


def bernoulli_variance(p: float) -> float:
    """Population variance p(1-p) of a binary reward with success rate p."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"success probability {p} outside [0, 1]")
    return p * (1.0 - p)


def clipped_surrogate(ratios, advantages, epsilon: float) -> float:
    """Clipped surrogate policy loss for one rollout group.

    Formula-level only: takes precomputed probability ratios, returns
    -(1/n) * sum(min(ratio*A, clip(ratio, 1-eps, 1+eps)*A)).
    """
    rho = np.asarray(ratios, dtype=float)
    adv = np.asarray(advantages, dtype=float)
    if rho.shape != adv.shape:
        raise ShapeError(f"ratios {rho.shape} vs advantages {adv.shape}")
    if np.any(rho <= 0.0):
        raise DomainError("probability ratios must be positive")
    if not 0.0 < epsilon < 1.0:
        raise DomainError(f"clip ratio {epsilon} outside (0, 1)")
    clipped = np.clip(rho, 1.0 - epsilon, 1.0 + epsilon)
    return float(-np.mean(np.minimum(rho * adv, clipped * adv)))


def judge_reward(predicted: float, realized: float) -> float:
    """Squared-error calibration reward: 1 - (4*(predicted - realized))^2.

    Both arguments live in [0, 1/4]; the reward lies in [0, 1] and equals
    1 exactly when the prediction matches the realized variance.
    """
    if not 0.0 <= predicted <= VARIANCE_MAX:
        raise DomainError(f"predicted variance {predicted} outside [0, 0.25]")
    if not 0.0 <= realized <= VARIANCE_MAX:
        raise DomainError(f"realized variance {realized} outside [0, 0.25]")
    err = 4.0 * (predicted - realized)
    return 1.0 - err * err


def total_loss(policy_loss: float, judge_loss: float, judge_weight: float) -> float:
    """Joint objective: policy loss plus judge_weight times the judgment loss."""
    if judge_weight < 0.0:
        raise DomainError(f"judgment weight {judge_weight} must be nonnegative")
    return policy_loss + judge_weight * judge_loss


@dataclass(frozen=True)
class RolloutGroup:
    """One prompt's rollout rewards with derived group statistics."""

    prompt_id: int
    rewards: np.ndarray
    mean_reward: float
    advantages: np.ndarray
    empirical_variance: float

    @classmethod
    def from_rewards(cls, prompt_id: int, rewards) -> "RolloutGroup":
        mean, adv = compute_advantages(rewards)
        return cls(
            prompt_id=prompt_id,
            rewards=np.asarray(rewards, dtype=float),
            mean_reward=mean,
            advantages=adv,
            empirical_variance=empirical_variance(adv),
        )

    @property
    def n(self) -> int:
        return int(self.rewards.size)


@dataclass
class JudgeConfig:
    """Knobs for the grid-softmax judgment predictor surrogate."""

    base_step: float = 60.0  # REINFORCE step size before the judge_weight multiplier
    similarity_scale: float = 0.5  # RBF length scale for memory-exemplar similarity
    # Probability that a judgment yields no usable value. Without in-context
    # exemplars the judge mistakes the candidate for a task to solve and
    # rarely emits a parseable prediction; calibration exemplars all but
    # eliminate the failures. Failed judgments fall back to predicting 0.0.
    failure_rate_empty_memory: float = 0.876
    failure_rate_with_memory: float = 0.003
    # Initial tilt of the fresh predictor toward high predictions
    # (optimism in the face of uncertainty; see GridPredictor.optimistic).
    optimism: float = 2.0


@dataclass
class SecConfig:
    categories: int = 10
    temperature: float = 0.4
    ema_rate: float = 0.5


@dataclass
class AdclConfig:
    chunks: int = 8
    probe_rollouts: int = 4


@dataclass
class PclConfig:
    learning_rate: float = 0.005
    updates_per_step: int = 1
    target: float = 0.5  # binary mode: select predictions nearest this pass rate


@dataclass
class SimConfig:
    """Synthetic policy environment parameters."""

    skill_init: float = 0.0
    skill_lr: float = 0.1
    difficulty_scale: float = 1.0
    concentration: float = 8.0  # Beta concentration, continuous rewards only
    obs_noise: float = 0.5  # stddev of the noise on observable difficulty
    # One skill per prompt category (the default): competence advances only
    # where training happens, so current informativeness depends jointly on
    # category and difficulty, not on any single static feature.
    per_category_skill: bool = True


@dataclass
class RunConfig:
    """Everything one seeded run needs besides the prompt pool."""

    n: int = 8  # rollouts per selected prompt
    batch_size: int = 16  # B
    pool_multiplier: int = 8  # m; candidate pool is m*B
    memory_k: int = 3  # calibration memory capacity
    judge_lambda: float = 0.01  # judgment update weight
    baseline_alpha: float = 0.95  # EMA rate of the judge-reward baseline
    clip_epsilon: float = 0.2
    seed: int = 0
    reward_mode: str = "binary"
    strategy: str = "metis"
    reuse_selected: bool = False  # return selected prompts to the epoch pool
    judge: JudgeConfig = field(default_factory=JudgeConfig)
    sec: SecConfig = field(default_factory=SecConfig)
    adcl: AdclConfig = field(default_factory=AdclConfig)
    pcl: PclConfig = field(default_factory=PclConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def validate(self) -> None:
        if self.n < 2:
            raise DomainError("n must be >= 2 (group variance needs two rollouts)")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if self.pool_multiplier < 1:
            raise DomainError("pool_multiplier must be >= 1")
        if self.memory_k < 0:
            raise DomainError("memory_k must be >= 0")
        if self.judge_lambda < 0.0:
            raise DomainError("judge_lambda must be >= 0")
        if not 0.0 <= self.baseline_alpha < 1.0:
            raise DomainError("baseline_alpha must lie in [0, 1)")
        if not 0.0 < self.clip_epsilon < 1.0:
            raise DomainError("clip_epsilon must lie in (0, 1)")
        if self.reward_mode not in REWARD_MODES:
            raise DomainError(f"reward_mode must be one of {REWARD_MODES}")
        if self.strategy not in STRATEGIES:
            raise DomainError(f"strategy must be one of {STRATEGIES}")
