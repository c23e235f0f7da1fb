"""External-curriculum baselines behind the same selector interface.

SEC treats the curriculum as a bandit over coarse prompt categories, ADCL
is an offline-then-online easy-to-hard chunk schedule, PCL scores
candidates with a small learned value model. Uniform sampling lives in
:mod:`metis.curriculum`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import rng as rngmod
from .core import DomainError, Prompt, RunConfig
from .curriculum import PoolExhaustedError, PoolSampler, Selection, Selector, top_b
from .sim import PromptOutcome, SimEnvironment


# --------------------------------------------------------------------------
# SEC: Boltzmann bandit over prompt categories
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SecState:
    q_values: np.ndarray
    temperature: float = 0.4
    ema_rate: float = 0.5

    def __post_init__(self):
        if self.q_values.size < 1:
            raise DomainError("SEC needs at least one category")
        if self.temperature <= 0:
            raise DomainError("Boltzmann temperature must be positive")


def sec_category_probs(state: SecState, nonempty: Sequence[int]) -> np.ndarray:
    """softmax(Q / temperature) over the given categories."""
    q = state.q_values[list(nonempty)] / state.temperature
    z = q - q.max()
    e = np.exp(z)
    return e / e.sum()


def sec_select(
    state: SecState,
    available: dict[int, list[Prompt]],
    b: int,
    rng: np.random.Generator,
) -> list[Prompt]:
    """Draw b prompts: category via Boltzmann softmax over Q-values, then
    uniform within the category. Exhausted categories are skipped (the
    softmax renormalizes over the nonempty ones); mutates ``available``."""
    chosen: list[Prompt] = []
    for _ in range(b):
        nonempty = [c for c in sorted(available) if available[c]]
        if not nonempty:
            raise PoolExhaustedError("all SEC categories are empty")
        probs = sec_category_probs(state, nonempty)
        cat = nonempty[rng.choice(len(nonempty), p=probs)]
        idx = int(rng.integers(len(available[cat])))
        chosen.append(available[cat].pop(idx))
    return chosen


def sec_update(state: SecState, outcomes: Sequence[PromptOutcome]) -> SecState:
    """EMA each observed category's Q toward its batch mean |advantage|.

    The simulator has no token dimension, so the sequence-level mean |A_i|
    of a prompt's group stands in for the per-token magnitude.
    """
    by_cat: dict[int, list[float]] = {}
    for o in outcomes:
        by_cat.setdefault(o.prompt.category, []).append(
            float(np.mean(np.abs(o.group.advantages)))
        )
    q = state.q_values.copy()
    eta = state.ema_rate
    for cat, vals in by_cat.items():
        q[cat] = (1.0 - eta) * q[cat] + eta * float(np.mean(vals))
    return replace(state, q_values=q)


class SecSelector(Selector):
    name = "sec"

    def __init__(self, prompts: Sequence[Prompt], config: RunConfig):
        self.config = config
        n_cat = config.sec.categories
        for p in prompts:
            if not 0 <= p.category < n_cat:
                raise DomainError(f"prompt {p.id} category {p.category} outside [0, {n_cat})")
        self.state = SecState(
            q_values=np.zeros(n_cat),
            temperature=config.sec.temperature,
            ema_rate=config.sec.ema_rate,
        )
        self._by_cat: dict[int, list[Prompt]] = {c: [] for c in range(n_cat)}
        for p in sorted(prompts, key=lambda q: q.id):
            self._by_cat[p.category].append(p)
        self.rng = rngmod.substream(config.seed, rngmod.STRATEGY)
        self._available = self._fresh_epoch()

    def _fresh_epoch(self) -> dict[int, list[Prompt]]:
        return {c: list(ps) for c, ps in self._by_cat.items()}

    def select(self, iteration: int) -> Selection:
        remaining = sum(len(v) for v in self._available.values())
        if remaining < self.config.batch_size:
            self._available = self._fresh_epoch()
        chosen = sec_select(self.state, self._available, self.config.batch_size, self.rng)
        return Selection(
            selected=chosen,
            scores={p.id: float(self.state.q_values[p.category]) for p in chosen},
            n_candidates=len(chosen),
        )

    def update(self, outcomes: Sequence[PromptOutcome], iteration: int) -> None:
        self.state = sec_update(self.state, outcomes)


# --------------------------------------------------------------------------
# ADCL: easy-to-hard chunks with between-chunk difficulty re-estimation
# --------------------------------------------------------------------------


class AdclEpochEnd(Exception):
    """Every chunk has been served; the schedule wrapped an epoch."""


ProbeFn = Callable[[Prompt], np.ndarray]


def adcl_difficulty(rewards: np.ndarray, reward_mode: str) -> float:
    """Binary: one minus the empirical pass rate. Continuous: empirical
    reward variance (low variance counts as easy, as written)."""
    r = np.asarray(rewards, dtype=float)
    if reward_mode == "binary":
        return float(1.0 - r.mean())
    return float(np.mean((r - r.mean()) ** 2))


@dataclass
class AdclState:
    chunks: list[list[Prompt]]  # fixed membership, ascending initial difficulty
    order: list[Prompt]  # serving order of the current chunk
    difficulties: dict[int, float]
    current_chunk: int = 0
    served: int = 0
    probe_rollouts: int = 4


def _probe_chunk(
    prompts: Sequence[Prompt], probe: ProbeFn, reward_mode: str
) -> tuple[dict[int, float], list[Prompt]]:
    scores = {p.id: adcl_difficulty(probe(p), reward_mode) for p in prompts}
    ordered = sorted(prompts, key=lambda p: (scores[p.id], p.id))
    return scores, ordered


def adcl_init(
    prompts: Sequence[Prompt],
    probe: ProbeFn,
    n_chunks: int,
    probe_rollouts: int,
    reward_mode: str,
) -> AdclState:
    """Probe every prompt, sort ascending by difficulty, split into
    near-equal sequential chunks; serving starts at the easiest chunk."""
    if probe_rollouts < 1:
        raise DomainError("probe_rollouts must be >= 1")
    if n_chunks < 1:
        raise DomainError("chunk count must be >= 1")
    scores, ordered = _probe_chunk(prompts, probe, reward_mode)
    pieces = np.array_split(np.arange(len(ordered)), min(n_chunks, len(ordered)))
    chunks = [[ordered[i] for i in piece] for piece in pieces if len(piece)]
    return AdclState(
        chunks=chunks,
        order=list(chunks[0]),
        difficulties=scores,
        current_chunk=0,
        served=0,
        probe_rollouts=probe_rollouts,
    )


def adcl_next_batch(state: AdclState, b: int, probe: ProbeFn, reward_mode: str) -> list[Prompt]:
    """Serve up to b prompts from the current chunk.

    A consumed chunk advances the schedule: the next chunk is re-probed
    under the current policy and locally re-sorted before any of its
    prompts is served. Raises :class:`AdclEpochEnd` once every chunk has
    been consumed.
    """
    if state.served >= len(state.order):
        nxt = state.current_chunk + 1
        if nxt >= len(state.chunks):
            raise AdclEpochEnd
        scores, ordered = _probe_chunk(state.chunks[nxt], probe, reward_mode)
        state.difficulties.update(scores)
        state.order = ordered
        state.current_chunk = nxt
        state.served = 0
    batch = state.order[state.served : state.served + b]
    state.served += len(batch)
    return batch


class AdclSelector(Selector):
    name = "adcl"

    def __init__(self, prompts: Sequence[Prompt], config: RunConfig, env: SimEnvironment):
        self.config = config
        self.env = env
        self.probe_rng = rngmod.substream(config.seed, rngmod.PROBE)
        self.prompts = list(prompts)
        self.state = adcl_init(
            self.prompts,
            self._probe,
            config.adcl.chunks,
            config.adcl.probe_rollouts,
            config.reward_mode,
        )

    def _probe(self, prompt: Prompt) -> np.ndarray:
        return self.env.probe_rewards(prompt, self.config.adcl.probe_rollouts, self.probe_rng)

    def select(self, iteration: int) -> Selection:
        try:
            batch = adcl_next_batch(
                self.state, self.config.batch_size, self._probe, self.config.reward_mode
            )
        except AdclEpochEnd:
            # New pass over the pool: restart at the first chunk, re-probed
            # under the current policy.
            scores, ordered = _probe_chunk(self.state.chunks[0], self._probe, self.config.reward_mode)
            self.state.difficulties.update(scores)
            self.state.order = ordered
            self.state.current_chunk = 0
            self.state.served = 0
            batch = adcl_next_batch(
                self.state, self.config.batch_size, self._probe, self.config.reward_mode
            )
        return Selection(
            selected=batch,
            scores={p.id: -self.state.difficulties[p.id] for p in batch},
            n_candidates=len(batch),
        )


# --------------------------------------------------------------------------
# PCL: learned value model over candidate features
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PclState:
    weights: np.ndarray  # linear readout over [observables, bias]
    learning_rate: float = 0.005
    target: float = 0.5
    updates_per_step: int = 1


def pcl_predict(state: PclState, features: np.ndarray) -> np.ndarray:
    f = np.atleast_2d(np.asarray(features, dtype=float))
    if f.shape[1] != state.weights.size:
        raise DomainError(f"PCL features dim {f.shape[1]} != weights dim {state.weights.size}")
    return f @ state.weights


def pcl_scores(state: PclState, features: np.ndarray, reward_mode: str) -> np.ndarray:
    """Selection scores: closeness to the target pass rate in binary mode,
    the predicted variance itself in continuous mode."""
    preds = pcl_predict(state, features)
    if reward_mode == "binary":
        return -np.abs(preds - state.target)
    return preds


def pcl_regress(state: PclState, features: np.ndarray, targets: np.ndarray) -> PclState:
    """Squared-error regression steps of predictions toward realized targets."""
    f = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(targets, dtype=float)
    w = state.weights.copy()
    for _ in range(state.updates_per_step):
        err = f @ w - y
        grad = 2.0 * (f.T @ err) / len(y)
        w = w - state.learning_rate * grad
    return replace(state, weights=w)


class PclSelector(Selector):
    name = "pcl"

    def __init__(self, prompts: Sequence[Prompt], config: RunConfig, env: SimEnvironment):
        self.config = config
        self.env = env
        self.sampler = PoolSampler(
            prompts, rngmod.substream(config.seed, rngmod.POOL), config.reuse_selected
        )
        self.state = PclState(
            weights=np.zeros(env.obs_dim + 1),
            learning_rate=config.pcl.learning_rate,
            target=config.pcl.target,
            updates_per_step=config.pcl.updates_per_step,
        )
        self._pending: dict[int, np.ndarray] = {}

    def _features(self, prompt: Prompt) -> np.ndarray:
        return np.concatenate([self.env.observables(prompt), [1.0]])

    def select(self, iteration: int) -> Selection:
        cfg = self.config
        candidates = self.sampler.draw(cfg.pool_multiplier * cfg.batch_size)
        feats = np.stack([self._features(p) for p in candidates])
        scores_arr = pcl_scores(self.state, feats, cfg.reward_mode)
        scores = {p.id: float(scores_arr[i]) for i, p in enumerate(candidates)}
        chosen = top_b(scores, cfg.batch_size)
        self.sampler.commit(chosen)
        by_id = {p.id: p for p in candidates}
        self._pending = {p.id: feats[i] for i, p in enumerate(candidates)}
        return Selection(
            selected=[by_id[pid] for pid in chosen],
            scores=scores,
            n_candidates=len(candidates),
        )

    def update(self, outcomes: Sequence[PromptOutcome], iteration: int) -> None:
        feats = np.stack([self._pending[o.prompt.id] for o in outcomes])
        if self.config.reward_mode == "binary":
            targets = np.array([o.group.mean_reward for o in outcomes])
        else:
            targets = np.array([o.group.empirical_variance for o in outcomes])
        self.state = pcl_regress(self.state, feats, targets)
        self._pending = {}


def uniform_select(sampler: PoolSampler, b: int) -> list[Prompt]:
    """B prompts uniformly without replacement (no-curriculum reference)."""
    drawn = sampler.draw(b)
    sampler.commit([p.id for p in drawn])
    return drawn
