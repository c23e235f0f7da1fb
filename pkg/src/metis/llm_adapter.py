"""Live mode: elicit self-judgments (and optionally task rollouts) from any
chat-completions-compatible endpoint.

Live runs measure selection quality and failure rates only; there are no
weight updates against a served model. All raw traffic is journaled as
JSON-lines so a recorded session can be replayed offline to bit-identical
metrics.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import httpx
import numpy as np

from . import rng as rngmod
from .core import DomainError, Prompt, RolloutGroup, RunConfig, judge_reward
from .curriculum import PoolSampler, top_b
from .judge import (
    BaselineState,
    CalibrationMemory,
    MemoryEntry,
    ParseResult,
    baseline_update,
    extract_boxed,
    memory_refresh,
    parse_judgment,
    render_judgment_messages,
)

FAILURE_PARSE = "parse"
FAILURE_TRANSPORT = "transport"


class TransportError(RuntimeError):
    """Request could not be completed after the configured retries."""


class ProtocolError(RuntimeError):
    """Endpoint answered, but not with a chat completion."""


@dataclass
class EndpointConfig:
    base_url: str
    model: str
    timeout: float = 30.0
    max_concurrency: int = 4
    temperature: float = 0.7
    max_tokens: int = 1024
    retries: int = 2
    backoff: float = 0.5
    api_key: str = ""

    def __post_init__(self):
        if self.timeout <= 0:
            raise DomainError("timeout must be positive")
        if self.max_concurrency < 1:
            raise DomainError("max_concurrency must be >= 1")


class ChatCompletionsClient:
    """Minimal chat-completions JSON client with retries.

    ``transport`` is injectable so tests can stub the endpoint without a
    network.
    """

    def __init__(self, config: EndpointConfig, transport: Optional[httpx.BaseTransport] = None):
        self.config = config
        headers = {}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        self._client = httpx.Client(
            base_url=config.base_url,
            timeout=config.timeout,
            headers=headers,
            transport=transport,
        )

    def close(self) -> None:
        self._client.close()

    def complete(self, messages: list[dict]) -> str:
        payload = {
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }
        last_error: Exception | None = None
        for attempt in range(self.config.retries + 1):
            try:
                resp = self._client.post("/chat/completions", json=payload)
                resp.raise_for_status()
                data = resp.json()
                try:
                    content = data["choices"][0]["message"]["content"]
                except (KeyError, IndexError, TypeError) as exc:
                    raise ProtocolError(f"malformed completion payload: {exc}") from exc
                if not isinstance(content, str):
                    raise ProtocolError("completion content is not text")
                return content
            except ProtocolError:
                raise
            except (httpx.HTTPError, json.JSONDecodeError, ValueError) as exc:
                last_error = exc
                if attempt < self.config.retries and self.config.backoff > 0:
                    time.sleep(self.config.backoff * (attempt + 1))
        raise TransportError(
            f"request failed after {self.config.retries + 1} attempts: {last_error}"
        )


def judgment_messages(memory: CalibrationMemory, candidate: Prompt) -> list[dict]:
    system, user = render_judgment_messages(memory, candidate.text)
    return [{"role": "system", "content": system}, {"role": "user", "content": user}]


@dataclass
class JudgmentCall:
    """One judgment request/response with its parse outcome."""

    prompt_id: int
    messages: list[dict]
    response: Optional[str] = None
    parse: Optional[ParseResult] = None
    error: Optional[str] = None
    failure: Optional[str] = None  # parse | transport | None
    latency_s: float = 0.0

    @property
    def prediction(self) -> float:
        """Parsed value, or the 0.0 fallback on any failure."""
        if self.parse is not None and self.parse.ok:
            return self.parse.value
        return 0.0


def request_judgment(
    client: ChatCompletionsClient, memory: CalibrationMemory, candidate: Prompt
) -> JudgmentCall:
    """Send the two-message judgment request and parse the boxed value.

    Transport failures (after retries) and protocol errors are recorded in
    the call, never raised: the curriculum falls back to a 0.0 prediction
    exactly as for a parse failure.
    """
    if not candidate.text:
        raise DomainError(f"prompt {candidate.id} has empty text; live mode needs prompt text")
    messages = judgment_messages(memory, candidate)
    call = JudgmentCall(prompt_id=candidate.id, messages=messages)
    t0 = time.perf_counter()
    try:
        call.response = client.complete(messages)
        call.parse = parse_judgment(call.response)
        if not call.parse.ok:
            call.failure = FAILURE_PARSE
    except (TransportError, ProtocolError) as exc:
        call.error = str(exc)
        call.failure = FAILURE_TRANSPORT
    call.latency_s = time.perf_counter() - t0
    return call


RewardHook = Callable[[Prompt, str], float]


@dataclass
class RolloutCall:
    prompt_id: int
    completions: list[str]
    rewards: list[float]
    group: RolloutGroup


def request_rollouts(
    client: ChatCompletionsClient,
    prompt: Prompt,
    n: int,
    reward_hook: RewardHook,
) -> RolloutCall:
    """n independent completions for one prompt, scored by the hook.

    Requests run concurrently up to the endpoint's max concurrency;
    results are committed in rollout-index order. The parser-facing text
    is never truncated.
    """
    if not prompt.text:
        raise DomainError(f"prompt {prompt.id} has empty text; live mode needs prompt text")
    messages = [{"role": "user", "content": prompt.text}]
    with ThreadPoolExecutor(max_workers=client.config.max_concurrency) as pool:
        completions = list(pool.map(lambda _: client.complete(messages), range(n)))
    rewards = []
    for i, completion in enumerate(completions):
        r = float(reward_hook(prompt, completion))
        if not 0.0 <= r <= 1.0:
            raise DomainError(f"reward hook returned {r} for rollout {i} of prompt {prompt.id}")
        rewards.append(r)
    return RolloutCall(
        prompt_id=prompt.id,
        completions=completions,
        rewards=rewards,
        group=RolloutGroup.from_rewards(prompt.id, rewards),
    )


# --------------------------------------------------------------------------
# Reward hooks
# --------------------------------------------------------------------------


def boxed_match_hook(references: dict[int, str]) -> RewardHook:
    """Binary reward: last boxed expression of the completion, balanced
    braces, string-equal (stripped) to the prompt's reference answer."""

    def hook(prompt: Prompt, completion: str) -> float:
        ref = references.get(prompt.id)
        if ref is None:
            raise DomainError(f"no reference answer for prompt {prompt.id}")
        boxes = extract_boxed(completion)
        if not boxes:
            return 0.0
        return 1.0 if boxes[-1].strip() == ref.strip() else 0.0

    return hook


def command_reward_hook(argv: Sequence[str]) -> RewardHook:
    """External verifier: pipes {"prompt","completion"} JSON to stdin,
    expects a decimal reward in [0,1] on stdout."""
    import subprocess

    def hook(prompt: Prompt, completion: str) -> float:
        payload = json.dumps({"prompt": prompt.text, "completion": completion})
        out = subprocess.run(
            list(argv), input=payload, capture_output=True, text=True, check=True
        )
        return float(out.stdout.strip())

    return hook


# --------------------------------------------------------------------------
# Session journal and live loop
# --------------------------------------------------------------------------


class SessionJournal:
    """Append-only JSON-lines log of all raw traffic, for offline replay.

    Every record is stamped with the wall-clock write time; replay ignores
    the stamps, so reruns stay bit-identical on the replayable fields.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w")

    def write(self, record: dict) -> None:
        self._fh.write(json.dumps({**record, "ts": time.time()}) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def read_journal(path: str | Path) -> list[dict]:
    entries = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(json.loads(line))
    return entries


@dataclass
class LiveMetricsRow:
    iteration: int
    strategy: str
    mean_selected_reward: float
    mean_abs_advantage: float
    mean_realized_variance: float
    judge_reward_mean: float
    baseline_b: float
    failure_rate: float


def _live_row(
    iteration: int,
    groups: Sequence[RolloutGroup],
    judge_rewards: Sequence[float],
    baseline_b: float,
    failures: int,
    calls: int,
) -> LiveMetricsRow:
    abs_adv = np.concatenate([np.abs(g.advantages) for g in groups])
    return LiveMetricsRow(
        iteration=iteration,
        strategy="metis",
        mean_selected_reward=float(np.mean([g.mean_reward for g in groups])),
        mean_abs_advantage=float(np.mean(abs_adv)),
        mean_realized_variance=float(np.mean([g.empirical_variance for g in groups])),
        judge_reward_mean=float(np.mean(judge_rewards)),
        baseline_b=baseline_b,
        failure_rate=failures / calls if calls else 0.0,
    )


class LiveSession:
    """Self-judged curriculum against a served model.

    Judgment elicitation and rollout scoring only; the served model's
    weights are never updated. Candidate draws use the same seeded pool
    stream as simulation runs.
    """

    def __init__(
        self,
        prompts: Sequence[Prompt],
        config: RunConfig,
        endpoint: EndpointConfig,
        reward_hook: RewardHook,
        journal_path: str | Path,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        self.prompts = list(prompts)
        self.config = config
        self.endpoint = endpoint
        self.reward_hook = reward_hook
        self.client = ChatCompletionsClient(endpoint, transport=transport)
        self.journal = SessionJournal(journal_path)
        self.sampler = PoolSampler(
            self.prompts, rngmod.substream(config.seed, rngmod.POOL), config.reuse_selected
        )
        self.memory = CalibrationMemory(config.memory_k)
        self.baseline = BaselineState(0.0, config.baseline_alpha)
        self.journal.write(
            {
                "kind": "meta",
                "run": {
                    "n": config.n,
                    "batch_size": config.batch_size,
                    "pool_multiplier": config.pool_multiplier,
                    "memory_k": config.memory_k,
                    "baseline_alpha": config.baseline_alpha,
                    "seed": config.seed,
                },
                "endpoint": {"base_url": endpoint.base_url, "model": endpoint.model},
            }
        )

    def run(self, iterations: int) -> list[LiveMetricsRow]:
        rows = []
        for t in range(1, iterations + 1):
            rows.append(self.step(t))
        self.journal.close()
        self.client.close()
        return rows

    def step(self, iteration: int) -> LiveMetricsRow:
        cfg = self.config
        candidates = self.sampler.draw(cfg.pool_multiplier * cfg.batch_size)
        memory_snapshot = self.memory
        with ThreadPoolExecutor(max_workers=self.endpoint.max_concurrency) as pool:
            calls = list(
                pool.map(lambda p: request_judgment(self.client, memory_snapshot, p), candidates)
            )
        calls.sort(key=lambda c: c.prompt_id)  # commit order independent of arrival
        for call in calls:
            self.journal.write(
                {
                    "kind": "judgment",
                    "iteration": iteration,
                    "prompt_id": call.prompt_id,
                    "request": call.messages,
                    "response": call.response,
                    "error": call.error,
                    "failure": call.failure,
                    "latency_s": call.latency_s,
                }
            )
        scores = {c.prompt_id: c.prediction for c in calls}
        chosen = top_b(scores, cfg.batch_size)
        self.sampler.commit(chosen)
        by_id = {p.id: p for p in candidates}
        groups = []
        judge_rewards = []
        entries = []
        for pid in chosen:
            rollout = request_rollouts(self.client, by_id[pid], cfg.n, self.reward_hook)
            self.journal.write(
                {
                    "kind": "rollouts",
                    "iteration": iteration,
                    "prompt_id": pid,
                    "completions": rollout.completions,
                    "rewards": rollout.rewards,
                }
            )
            groups.append(rollout.group)
            judge_rewards.append(judge_reward(scores[pid], rollout.group.empirical_variance))
            entries.append(
                MemoryEntry(
                    prompt_id=pid,
                    variance=rollout.group.empirical_variance,
                    iteration=iteration,
                    text=by_id[pid].text,
                )
            )
        failures = sum(1 for c in calls if c.failure is not None)
        row = _live_row(
            iteration, groups, judge_rewards, self.baseline.b, failures, len(calls)
        )
        self.journal.write(
            {
                "kind": "iteration",
                "iteration": iteration,
                "selected": chosen,
                "metrics": row.__dict__,
            }
        )
        self.memory = memory_refresh(self.memory, entries)
        self.baseline = baseline_update(self.baseline, float(np.mean(judge_rewards)))
        return row


def replay_session(journal_path: str | Path) -> list[LiveMetricsRow]:
    """Recompute metrics offline from a recorded session.

    Judgment responses are re-parsed from the raw text and selection is
    re-derived, so a replay is bit-identical to the live run iff the
    journal is internally consistent.
    """
    entries = read_journal(journal_path)
    if not entries or entries[0].get("kind") != "meta":
        raise DomainError(f"journal {journal_path} lacks a meta header")
    meta = entries[0]["run"]
    batch_size = meta["batch_size"]
    baseline = BaselineState(0.0, meta["baseline_alpha"])
    by_iter: dict[int, dict] = {}
    for e in entries[1:]:
        it = by_iter.setdefault(e["iteration"], {"judgments": [], "rollouts": {}})
        if e["kind"] == "judgment":
            it["judgments"].append(e)
        elif e["kind"] == "rollouts":
            it["rollouts"][e["prompt_id"]] = e
    rows = []
    for iteration in sorted(by_iter):
        it = by_iter[iteration]
        scores = {}
        failures = 0
        for j in it["judgments"]:
            if j["response"] is None:
                failures += 1
                scores[j["prompt_id"]] = 0.0
                continue
            parsed = parse_judgment(j["response"])
            if not parsed.ok:
                failures += 1
            scores[j["prompt_id"]] = parsed.value if parsed.ok else 0.0
        chosen = top_b(scores, batch_size)
        groups = []
        judge_rewards = []
        for pid in chosen:
            rec = it["rollouts"][pid]
            group = RolloutGroup.from_rewards(pid, rec["rewards"])
            groups.append(group)
            judge_rewards.append(judge_reward(scores[pid], group.empirical_variance))
        rows.append(
            _live_row(iteration, groups, judge_rewards, baseline.b, failures, len(it["judgments"]))
        )
        baseline = baseline_update(baseline, float(np.mean(judge_rewards)))
    return rows
