"""Self-judgment subsystem.

A capacity-K calibration memory of recent (prompt, realized variance)
exemplars, a grid-softmax predictor trained by REINFORCE with an EMA
baseline, and the text interface used in live mode: a fixed judgment
prompt template plus a boxed-value parser with failure accounting.

The predictor is a desk-scale stand-in for eliciting the judgment from a
language model: it samples one value from an 11-point variance grid via a
linear softmax over context features, and is updated by exactly the same
centered-reward rule that would train judgment tokens in live training.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .core import VARIANCE_MAX, DomainError, ShapeError

# Admissible predictions offered to the judge, ascending, spanning [0, 1/4].
PREDICTION_GRID = (0.00, 0.02, 0.04, 0.06, 0.08, 0.10, 0.12, 0.15, 0.18, 0.20, 0.25)

# Prediction substituted whenever a judgment cannot be parsed; the lowest
# possible score, so failed prompts are effectively never selected.
FALLBACK_PREDICTION = 0.0

PARSE_OK = "ok"
PARSE_FAILURE = "failure"
REASON_NO_BOX = "no-box"
REASON_NON_NUMERIC = "non-numeric"
REASON_OUT_OF_RANGE = "out-of-range"


@dataclass(frozen=True)
class MemoryEntry:
    """One calibration exemplar: a prompt snapshot plus its realized variance."""

    prompt_id: int
    variance: float
    iteration: int
    text: str = ""
    observables: Optional[np.ndarray] = None


@dataclass(frozen=True)
class CalibrationMemory:
    """At most ``capacity`` exemplars from the most recent refresh."""

    capacity: int
    entries: tuple[MemoryEntry, ...] = ()

    def __post_init__(self):
        if self.capacity < 0:
            raise DomainError("memory capacity must be >= 0")
        if len(self.entries) > self.capacity:
            raise DomainError("memory holds more entries than its capacity")
        for e in self.entries:
            if not 0.0 <= e.variance <= VARIANCE_MAX + 1e-12:
                raise DomainError(f"stored variance {e.variance} outside [0, 0.25]")

    def __len__(self) -> int:
        return len(self.entries)


def memory_refresh(memory: CalibrationMemory, batch: Sequence[MemoryEntry]) -> CalibrationMemory:
    """Replace the memory with exemplars stratified across the batch's variances.

    Picks are quantile-spaced by variance rank, so the refreshed memory
    always spans the batch's minimum and maximum realized variance when
    capacity allows (K=3 keeps min, median, max). A batch smaller than the
    capacity is stored whole.
    """
    if memory.capacity == 0:
        return CalibrationMemory(0)
    if not batch:
        return memory
    ordered = sorted(batch, key=lambda e: (e.variance, e.prompt_id))
    if len(ordered) <= memory.capacity:
        picks = ordered
    elif memory.capacity == 1:
        picks = [ordered[(len(ordered) - 1) // 2]]
    else:
        ranks = np.rint(np.linspace(0, len(ordered) - 1, memory.capacity)).astype(int)
        picks = [ordered[r] for r in ranks]
    return CalibrationMemory(memory.capacity, tuple(picks))


def compute_features(
    observables,
    memory: CalibrationMemory,
    *,
    similarity_scale: float = 1.0,
) -> np.ndarray:
    """Judgment context features for one candidate.

    Concatenates the candidate's observable features, one slot per memory
    capacity unit holding similarity(candidate, exemplar) * exemplar
    variance (zero for unfilled slots), and a constant bias term.
    Similarity is an RBF kernel over the observables, so an exemplar
    identical to the candidate contributes its full stored variance.
    """
    obs = np.asarray(observables, dtype=float).ravel()
    slots = np.zeros(memory.capacity)
    for i, entry in enumerate(memory.entries):
        if entry.observables is None:
            continue
        ex = np.asarray(entry.observables, dtype=float).ravel()
        if ex.shape != obs.shape:
            raise ShapeError(f"exemplar observables {ex.shape} vs candidate {obs.shape}")
        d2 = float(np.sum((obs - ex) ** 2))
        slots[i] = math.exp(-d2 / (2.0 * similarity_scale**2)) * entry.variance
    return np.concatenate([obs, slots, [1.0]])


def feature_dim(obs_dim: int, memory_k: int) -> int:
    return obs_dim + memory_k + 1


@dataclass(frozen=True)
class GridPredictor:
    """Linear-softmax sampler over the prediction grid."""

    weights: np.ndarray  # (grid size, feature dim)
    base_step: float = 60.0

    @classmethod
    def zeros(cls, n_features: int, base_step: float = 60.0) -> "GridPredictor":
        return cls(weights=np.zeros((len(PREDICTION_GRID), n_features)), base_step=base_step)

    @classmethod
    def optimistic(
        cls, n_features: int, base_step: float = 60.0, optimism: float = 2.0
    ) -> "GridPredictor":
        """Fresh predictor tilted toward high-variance predictions.

        The bias column (the last feature) starts at optimism * grid/max,
        so an untrained judge over-predicts and learns mostly by demoting
        prompts whose realized variance disappoints: a far denser early
        training signal than waiting to luckily promote informative ones.
        """
        w = np.zeros((len(PREDICTION_GRID), n_features))
        w[:, -1] = optimism * np.asarray(PREDICTION_GRID) / VARIANCE_MAX
        return cls(weights=w, base_step=base_step)

    @property
    def n_features(self) -> int:
        return int(self.weights.shape[1])

    def distribution(self, features: np.ndarray) -> np.ndarray:
        f = np.asarray(features, dtype=float).ravel()
        if f.size != self.n_features:
            raise ShapeError(f"got {f.size} features, predictor expects {self.n_features}")
        logits = self.weights @ f
        if not np.all(np.isfinite(logits)):
            raise FloatingPointError("non-finite judgment logits")
        z = logits - logits.max()
        e = np.exp(z)
        return e / e.sum()


@dataclass
class Prediction:
    value: float
    index: int
    logprob: float
    probs: np.ndarray


def predict(
    predictor: GridPredictor,
    features,
    rng: np.random.Generator,
    greedy: bool = False,
) -> Prediction:
    """Sample one grid value from the predictor's softmax (argmax if greedy)."""
    probs = predictor.distribution(features)
    if greedy:
        idx = int(np.argmax(probs))
    else:
        idx = int(rng.choice(len(PREDICTION_GRID), p=probs))
    return Prediction(
        value=PREDICTION_GRID[idx],
        index=idx,
        logprob=float(np.log(probs[idx])),
        probs=probs,
    )


def predict_batch(
    predictor: GridPredictor, features_matrix: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized sampling for a whole candidate pool.

    Consumes exactly one uniform draw per candidate from ``rng`` (inverse
    CDF), so the stream stays deterministic regardless of pool size.
    Returns (indices, logprobs, probs_matrix).
    """
    f = np.asarray(features_matrix, dtype=float)
    logits = f @ predictor.weights.T
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite judgment logits")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    cum = np.cumsum(probs, axis=1)
    cum[:, -1] = 1.0 + 1e-12  # guard against round-off in the final bin
    u = rng.random(f.shape[0])
    indices = (cum > u[:, None]).argmax(axis=1)
    logprobs = np.log(probs[np.arange(f.shape[0]), indices])
    return indices, logprobs, probs


@dataclass
class JudgmentRecord:
    """One pre-rollout prediction with the context it was made in."""

    prompt_id: int
    predicted_v: float
    parse_status: str = PARSE_OK
    failure_reason: Optional[str] = None
    features: Optional[np.ndarray] = None
    sampled_index: Optional[int] = None
    logprob: Optional[float] = None
    baseline_at_sample: float = 0.0
    reward: Optional[float] = None


def reinforce_update(
    predictor: GridPredictor,
    record: JudgmentRecord,
    reward: float,
    baseline: float,
    judge_weight: float,
) -> GridPredictor:
    """One ascent step on (reward - baseline) * grad log p(sampled index).

    The log-softmax gradient for sampled index j is (1{k=j} - p_k) at
    logit k, backpropagated to the weights through the feature vector.
    Step size is base_step * judge_weight; a zero weight is a no-op, as is
    a failed record (it has no sampled index to reinforce).
    """
    if judge_weight < 0.0:
        raise DomainError("judgment weight must be >= 0")
    if judge_weight == 0.0 or record.parse_status != PARSE_OK or record.sampled_index is None:
        return predictor
    probs = predictor.distribution(record.features)
    grad_logits = -probs
    grad_logits[record.sampled_index] += 1.0
    step = predictor.base_step * judge_weight * (reward - baseline)
    new_w = predictor.weights + step * np.outer(grad_logits, record.features)
    return replace(predictor, weights=new_w)


@dataclass(frozen=True)
class BaselineState:
    """Exponential moving average of the mean judgment reward."""

    b: float = 0.0
    alpha: float = 0.95


def baseline_update(state: BaselineState, mean_reward: float) -> BaselineState:
    return BaselineState(
        b=state.alpha * state.b + (1.0 - state.alpha) * mean_reward,
        alpha=state.alpha,
    )


# --------------------------------------------------------------------------
# Judgment prompt rendering (public, bit-exact text format)
# --------------------------------------------------------------------------

_GRID_TEXT = "[" + ", ".join(f"{v:.2f}" for v in PREDICTION_GRID) + "]"

_SYSTEM_HEAD = (
    "You are a predictor that estimates the reward variance for a candidate problem.\n"
    "Reward variance definition: the variance of the rewards across multiple solution "
    "attempts by the current model on the same problem.\n"
    "High variance means rollouts disagree -- some attempts score well and others poorly "
    "-- which is exactly the regime where GRPO has the strongest learning signal.\n"
    "Low variance means rollouts agree (the model consistently passes or consistently "
    "fails), so there is little gradient to extract."
)

_SYSTEM_CALIBRATION = (
    "Calibration: The labeled examples show actual reward variances from recent model "
    "performance. Use them to calibrate your prediction."
)

_SYSTEM_FORMAT = (
    "Output your final prediction inside \\boxed{}, choosing one number from this list: "
    + _GRID_TEXT
    + ".\nExample final line: \\boxed{0.10}"
)

_USER_HEAD = "Predict the reward variance for the next problem."

_USER_CALIBRATION = (
    "The examples below show actual reward variances from recent model performance.\n"
    "Use them to calibrate your prediction."
)

_USER_FORMAT = "Put your final variance prediction inside \\boxed{}."


def _prompt_block(text: str) -> str:
    return 'PROMPT:\n"""\n' + text + '\n"""'


def render_judgment_messages(memory: CalibrationMemory, candidate_text: str) -> tuple[str, str]:
    """System and user messages of the judgment request.

    Exemplars render in memory order as ``[Example k]`` blocks with the
    prompt fenced by triple-quote lines and the realized variance to three
    decimals; the candidate closes the user message. An empty memory emits
    no example blocks and drops the calibration sentences.
    """
    if memory.entries:
        system = "\n".join([_SYSTEM_HEAD, _SYSTEM_CALIBRATION, _SYSTEM_FORMAT])
        user_lines = [_USER_HEAD, _USER_CALIBRATION, _USER_FORMAT]
    else:
        system = "\n".join([_SYSTEM_HEAD, _SYSTEM_FORMAT])
        user_lines = [_USER_HEAD, _USER_FORMAT]
    blocks = ["\n".join(user_lines)]
    for k, entry in enumerate(memory.entries, start=1):
        blocks.append(
            f"[Example {k}]\n" + _prompt_block(entry.text) + f"\nREWARD_VARIANCE: {entry.variance:.3f}"
        )
    blocks.append("[Candidate]\n" + _prompt_block(candidate_text))
    return system, "\n\n".join(blocks)


def render_judgment_prompt(memory: CalibrationMemory, candidate_text: str) -> str:
    """Full judgment prompt as one string (system message, blank line, user message)."""
    system, user = render_judgment_messages(memory, candidate_text)
    return system + "\n\n" + user


# --------------------------------------------------------------------------
# Boxed-value parsing
# --------------------------------------------------------------------------

_BOXED = re.compile(r"\\boxed")


def extract_boxed(text: str) -> list[str]:
    """All ``\\boxed{...}`` contents in order, with balanced-brace scanning."""
    found = []
    for m in _BOXED.finditer(text):
        i = m.end()
        while i < len(text) and text[i].isspace():
            i += 1
        if i >= len(text) or text[i] != "{":
            continue
        depth = 1
        i += 1
        start = i
        while i < len(text) and depth > 0:
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
            i += 1
        if depth == 0:
            found.append(text[start : i - 1])
    return found


def _as_number(content: str) -> Optional[float]:
    s = content.strip().strip("$").strip()
    try:
        return float(s)
    except ValueError:
        return None


@dataclass(frozen=True)
class ParseResult:
    ok: bool
    value: Optional[float] = None
    reason: Optional[str] = None

    @property
    def prediction(self) -> float:
        """Parsed value, or the 0.0 fallback on failure."""
        return self.value if self.ok else FALLBACK_PREDICTION


def parse_judgment(response: str) -> ParseResult:
    """Recover the predicted variance from a judgment response.

    Scans every balanced ``\\boxed{...}`` expression, takes the last one
    whose contents parse as a number, and accepts it iff it lies in
    [0, 1/4]. Off-grid in-range values are accepted; the grid is advisory.
    """
    boxes = extract_boxed(response)
    if not boxes:
        return ParseResult(ok=False, reason=REASON_NO_BOX)
    numbers = [v for v in (_as_number(b) for b in boxes) if v is not None]
    if not numbers:
        return ParseResult(ok=False, reason=REASON_NON_NUMERIC)
    value = numbers[-1]
    if not 0.0 <= value <= VARIANCE_MAX:
        return ParseResult(ok=False, reason=REASON_OUT_OF_RANGE)
    return ParseResult(ok=True, value=value)
