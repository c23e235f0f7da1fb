"""Variance-targeted prompt curriculum for group-relative RL fine-tuning.

The scheduler ranks candidate prompts by predicted within-group reward
variance (a pre-rollout self-judgment calibrated online from realized
outcomes), selects the top B for rollout, and closes the loop with a
REINFORCE update on the judgment. Baseline curricula, a synthetic policy
environment, and a seeded experiment harness live alongside.
"""

from .core import (
    Prompt,
    RolloutGroup,
    RunConfig,
    bernoulli_variance,
    clipped_surrogate,
    compute_advantages,
    empirical_variance,
    judge_reward,
    total_loss,
)
from .judge import (
    PREDICTION_GRID,
    CalibrationMemory,
    GridPredictor,
    parse_judgment,
    render_judgment_prompt,
)
from .curriculum import MetisSelector, OracleSelector, UniformSelector, top_b
from .harness import ExperimentSpec, load_spec, run_ablation, run_experiment, run_single
from .sim import SimEnvironment, generate_pool

__version__ = "0.1.0"

__all__ = [
    "Prompt",
    "RolloutGroup",
    "RunConfig",
    "compute_advantages",
    "empirical_variance",
    "bernoulli_variance",
    "clipped_surrogate",
    "judge_reward",
    "total_loss",
    "PREDICTION_GRID",
    "CalibrationMemory",
    "GridPredictor",
    "parse_judgment",
    "render_judgment_prompt",
    "MetisSelector",
    "OracleSelector",
    "UniformSelector",
    "top_b",
    "ExperimentSpec",
    "load_spec",
    "run_experiment",
    "run_ablation",
    "run_single",
    "SimEnvironment",
    "generate_pool",
    "__version__",
]
