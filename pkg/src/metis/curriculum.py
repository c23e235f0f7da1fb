"""Candidate sampling, top-B selection, the oracle selector, and the
per-iteration loop that ties judgment, rollout, and updates together."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import rng as rngmod
from .core import DomainError, Prompt, RunConfig, judge_reward
from .judge import (
    FALLBACK_PREDICTION,
    PARSE_FAILURE,
    PREDICTION_GRID,
    BaselineState,
    CalibrationMemory,
    GridPredictor,
    JudgmentRecord,
    MemoryEntry,
    baseline_update,
    compute_features,
    feature_dim,
    memory_refresh,
    predict_batch,
    reinforce_update,
)
from .sim import PromptOutcome, SimEnvironment


class PoolExhaustedError(RuntimeError):
    """No prompts are available to draw from."""


class UnsupportedModeError(RuntimeError):
    """Operation requires simulation-mode ground truth."""


class PoolSampler:
    """Uniform without-replacement candidate draws with epoch bookkeeping.

    Prompts selected for training are consumed for the rest of the epoch
    (unless ``reuse_selected``); unselected candidates return to the
    available set. When fewer prompts remain than requested, the draw
    returns the remainder and the next draw starts a fresh epoch.
    """

    def __init__(self, prompts: Sequence[Prompt], rng: np.random.Generator, reuse_selected: bool = False):
        if not prompts:
            raise PoolExhaustedError("empty prompt pool")
        self.prompts = {p.id: p for p in prompts}
        if len(self.prompts) != len(prompts):
            raise DomainError("duplicate prompt ids in pool")
        self.rng = rng
        self.reuse_selected = reuse_selected
        self._available = sorted(self.prompts)
        self._outstanding: list[int] = []

    def draw(self, count: int) -> list[Prompt]:
        if count < 1:
            raise DomainError("draw count must be >= 1")
        if not self._available:
            self._available = sorted(self.prompts)  # new epoch
        take = min(count, len(self._available))
        idx = self.rng.choice(len(self._available), size=take, replace=False)
        drawn = [self._available[i] for i in sorted(idx)]
        chosen = set(drawn)
        self._available = [pid for pid in self._available if pid not in chosen]
        self._outstanding = drawn
        return [self.prompts[pid] for pid in drawn]

    def commit(self, selected_ids) -> None:
        """Finish a draw: unselected candidates go back to the epoch pool."""
        selected = set(selected_ids)
        keep = selected if self.reuse_selected else set()
        returned = [pid for pid in self._outstanding if pid not in selected or pid in keep]
        self._available = sorted(set(self._available) | set(returned))
        self._outstanding = []


def top_b(scores: Mapping[int, float], b: int) -> list[int]:
    """Ids of the b largest scores; ties broken by ascending id.

    The result is a total order independent of input ordering. Asking for
    more than exist returns everything, ranked.
    """
    if b <= 0:
        raise DomainError("selection size must be positive")
    if not scores:
        raise DomainError("empty score map")
    ranked = sorted(scores, key=lambda pid: (-scores[pid], pid))
    return ranked[: min(b, len(ranked))]


@dataclass
class Selection:
    """One iteration's selection with scores and judgment diagnostics."""

    selected: list[Prompt]
    scores: dict[int, float]
    records: dict[int, JudgmentRecord] = field(default_factory=dict)
    n_candidates: int = 0
    n_failures: int = 0


class Selector:
    """Per-iteration strategy interface: pick a batch, then absorb outcomes."""

    name = "base"

    def select(self, iteration: int) -> Selection:
        raise NotImplementedError

    def update(self, outcomes: Sequence[PromptOutcome], iteration: int) -> None:
        pass

    # Judge diagnostics; non-judge strategies report nothing.
    def judge_stats(self) -> dict:
        return {}


class UniformSelector(Selector):
    """No curriculum: B prompts uniformly without replacement."""

    name = "uniform"

    def __init__(self, prompts: Sequence[Prompt], config: RunConfig):
        self.config = config
        self.sampler = PoolSampler(
            prompts, rngmod.substream(config.seed, rngmod.POOL), config.reuse_selected
        )

    def select(self, iteration: int) -> Selection:
        drawn = self.sampler.draw(self.config.batch_size)
        self.sampler.commit([p.id for p in drawn])
        return Selection(
            selected=drawn,
            scores={p.id: 0.0 for p in drawn},
            n_candidates=len(drawn),
        )


class OracleSelector(Selector):
    """Reference selector: ranks candidates by true population variance.

    Simulation only; there is no ground-truth variance to read in live mode.
    """

    name = "oracle"

    def __init__(self, prompts: Sequence[Prompt], config: RunConfig, env: SimEnvironment):
        if env is None or not hasattr(env, "true_variance"):
            raise UnsupportedModeError("oracle selection needs a simulation environment")
        self.config = config
        self.env = env
        self.sampler = PoolSampler(
            prompts, rngmod.substream(config.seed, rngmod.POOL), config.reuse_selected
        )

    def select(self, iteration: int) -> Selection:
        candidates = self.sampler.draw(self.config.pool_multiplier * self.config.batch_size)
        scores = {p.id: self.env.true_variance(p) for p in candidates}
        chosen = top_b(scores, self.config.batch_size)
        self.sampler.commit(chosen)
        by_id = {p.id: p for p in candidates}
        return Selection(
            selected=[by_id[pid] for pid in chosen],
            scores=scores,
            n_candidates=len(candidates),
        )


def oracle_select(candidates: Sequence[Prompt], env: SimEnvironment, b: int) -> list[int]:
    """Top-b candidate ids by the environment's true variance."""
    if env is None or not hasattr(env, "true_variance"):
        raise UnsupportedModeError("oracle selection needs a simulation environment")
    return top_b({p.id: env.true_variance(p) for p in candidates}, b)


class MetisSelector(Selector):
    """Self-judged curriculum: predict each candidate's variance from the
    calibration memory, select the top B, and reinforce the predictor from
    realized outcomes.

    Within one iteration all predictions are made against an immutable
    snapshot of (predictor, memory, baseline); every state change happens
    in :meth:`update`, after rollouts, so realized variances never leak
    into the same iteration's predictions.
    """

    name = "metis"

    def __init__(self, prompts: Sequence[Prompt], config: RunConfig, env: SimEnvironment):
        self.config = config
        self.env = env
        self.sampler = PoolSampler(
            prompts, rngmod.substream(config.seed, rngmod.POOL), config.reuse_selected
        )
        self.judge_rng = rngmod.substream(config.seed, rngmod.JUDGE)
        self.memory = CalibrationMemory(config.memory_k)
        self.predictor = GridPredictor.optimistic(
            feature_dim(env.obs_dim, config.memory_k),
            config.judge.base_step,
            config.judge.optimism,
        )
        self.initial_weights = self.predictor.weights.copy()
        self.baseline = BaselineState(0.0, config.baseline_alpha)
        self._pending: dict[int, JudgmentRecord] = {}
        self._judge_reward_mean: Optional[float] = None

    def select(self, iteration: int) -> Selection:
        cfg = self.config
        candidates = self.sampler.draw(cfg.pool_multiplier * cfg.batch_size)
        feats = np.stack(
            [
                compute_features(
                    self.env.observables(p),
                    self.memory,
                    similarity_scale=cfg.judge.similarity_scale,
                )
                for p in candidates
            ]
        )
        # Failure draws precede the grid sampling so the judge stream stays
        # aligned regardless of how many judgments fail.
        fail_rate = (
            cfg.judge.failure_rate_empty_memory
            if len(self.memory) == 0
            else cfg.judge.failure_rate_with_memory
        )
        fail_draws = self.judge_rng.random(len(candidates))
        indices, logprobs, _ = predict_batch(self.predictor, feats, self.judge_rng)
        records = {}
        scores = {}
        n_failures = 0
        for i, p in enumerate(candidates):
            if fail_draws[i] < fail_rate:
                n_failures += 1
                rec = JudgmentRecord(
                    prompt_id=p.id,
                    predicted_v=FALLBACK_PREDICTION,
                    parse_status=PARSE_FAILURE,
                    failure_reason="unparseable",
                    features=feats[i],
                    baseline_at_sample=self.baseline.b,
                )
            else:
                rec = JudgmentRecord(
                    prompt_id=p.id,
                    predicted_v=PREDICTION_GRID[indices[i]],
                    features=feats[i],
                    sampled_index=int(indices[i]),
                    logprob=float(logprobs[i]),
                    baseline_at_sample=self.baseline.b,
                )
            records[p.id] = rec
            scores[p.id] = rec.predicted_v
        chosen = top_b(scores, cfg.batch_size)
        self.sampler.commit(chosen)
        by_id = {p.id: p for p in candidates}
        self._pending = records
        return Selection(
            selected=[by_id[pid] for pid in chosen],
            scores=scores,
            records=records,
            n_candidates=len(candidates),
            n_failures=n_failures,
        )

    def update(self, outcomes: Sequence[PromptOutcome], iteration: int) -> None:
        cfg = self.config
        rewards = []
        for outcome in outcomes:
            rec = self._pending[outcome.prompt.id]
            rec.reward = judge_reward(rec.predicted_v, outcome.group.empirical_variance)
            rewards.append(rec.reward)
            self.predictor = reinforce_update(
                self.predictor, rec, rec.reward, rec.baseline_at_sample, cfg.judge_lambda
            )
        batch = [
            MemoryEntry(
                prompt_id=o.prompt.id,
                variance=o.group.empirical_variance,
                iteration=iteration,
                text=o.prompt.text,
                observables=self.env.observables(o.prompt),
            )
            for o in outcomes
        ]
        self.memory = memory_refresh(self.memory, batch)
        self._judge_reward_mean = float(np.mean(rewards)) if rewards else None
        if rewards:
            self.baseline = baseline_update(self.baseline, self._judge_reward_mean)
        self._pending = {}

    def judge_stats(self) -> dict:
        return {
            "judge_reward_mean": self._judge_reward_mean,
            "baseline_b": self.baseline.b,
        }


@dataclass
class IterationReport:
    iteration: int
    strategy: str
    selection: Selection
    outcomes: list[PromptOutcome]
    mean_selected_reward: float
    mean_abs_advantage: float
    mean_realized_variance: float
    mean_true_variance: Optional[float]
    judge_reward_mean: Optional[float]
    baseline_b: Optional[float]
    failure_rate: float
    skill: Optional[float]
    wall_ms: float


def run_iteration(selector: Selector, env: SimEnvironment, iteration: int) -> IterationReport:
    """Execute one scheduler iteration.

    Order: select a batch against the pre-iteration state snapshot, roll
    out every selected prompt (exactly B groups of n rewards), apply the
    policy's learning step, then let the selector absorb the realized
    outcomes (judge reinforcement, memory refresh, baseline update).
    """
    t0 = time.perf_counter()
    selection = selector.select(iteration)
    outcomes = [
        PromptOutcome(
            prompt=p,
            group=env.rollout_group(p, iteration),
            true_variance=env.true_variance(p),
        )
        for p in selection.selected
    ]
    env.apply_policy_update(outcomes)
    selector.update(outcomes, iteration)
    stats = selector.judge_stats()
    abs_adv = np.concatenate([np.abs(o.group.advantages) for o in outcomes])
    report = IterationReport(
        iteration=iteration,
        strategy=selector.name,
        selection=selection,
        outcomes=outcomes,
        mean_selected_reward=float(np.mean([o.group.mean_reward for o in outcomes])),
        mean_abs_advantage=float(np.mean(abs_adv)),
        mean_realized_variance=float(np.mean([o.group.empirical_variance for o in outcomes])),
        mean_true_variance=float(np.mean([o.true_variance for o in outcomes])),
        judge_reward_mean=stats.get("judge_reward_mean"),
        baseline_b=stats.get("baseline_b"),
        failure_rate=(selection.n_failures / selection.n_candidates) if selection.n_candidates else 0.0,
        skill=env.skill,
        wall_ms=(time.perf_counter() - t0) * 1e3,
    )
    return report


def metis_step(selector: MetisSelector, env: SimEnvironment, iteration: int) -> IterationReport:
    """One full self-judged curriculum iteration (see :func:`run_iteration`)."""
    return run_iteration(selector, env, iteration)
