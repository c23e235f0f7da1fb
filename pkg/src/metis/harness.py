"""Configuration, seeded experiment runner, metrics pipeline, and sweeps.

Metrics are written as one CSV per (strategy, seed) with a fixed header,
plus a JSON-lines mirror. Wall-clock timing appears only in the mirror:
the CSV is required to be byte-identical across reruns of the same seed,
and timing never is.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml
from scipy.stats import binomtest

from .core import AdclConfig, DomainError, JudgeConfig, PclConfig, Prompt, RunConfig, SecConfig, SimConfig
from .curriculum import (
    IterationReport,
    MetisSelector,
    OracleSelector,
    Selector,
    UniformSelector,
    run_iteration,
)
from .baselines import AdclSelector, PclSelector, SecSelector
from .sim import SimEnvironment, generate_pool, load_pool

METRICS_COLUMNS = [
    "iteration",
    "strategy",
    "mean_selected_reward",
    "mean_abs_advantage",
    "mean_realized_variance",
    "mean_true_variance",
    "judge_reward_mean",
    "baseline_b",
    "failure_rate",
    "skill",
]

# Metrics whose per-seed trajectory mean is summarized across seeds.
SUMMARY_METRICS = [
    "mean_selected_reward",
    "mean_abs_advantage",
    "mean_realized_variance",
    "mean_true_variance",
    "judge_reward_mean",
    "failure_rate",
]


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


@dataclass
class MetricsRow:
    iteration: int
    strategy: str
    mean_selected_reward: float
    mean_abs_advantage: float
    mean_realized_variance: float
    mean_true_variance: Optional[float]
    judge_reward_mean: Optional[float]
    baseline_b: Optional[float]
    failure_rate: float
    skill: Optional[float]
    wall_ms: float

    @classmethod
    def from_report(cls, report: IterationReport) -> "MetricsRow":
        return cls(
            iteration=report.iteration,
            strategy=report.strategy,
            mean_selected_reward=report.mean_selected_reward,
            mean_abs_advantage=report.mean_abs_advantage,
            mean_realized_variance=report.mean_realized_variance,
            mean_true_variance=report.mean_true_variance,
            judge_reward_mean=report.judge_reward_mean,
            baseline_b=report.baseline_b,
            failure_rate=report.failure_rate,
            skill=report.skill,
            wall_ms=report.wall_ms,
        )


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def metrics_csv_lines(rows: Sequence[MetricsRow]) -> list[str]:
    lines = [",".join(METRICS_COLUMNS)]
    for r in rows:
        lines.append(",".join(_cell(getattr(r, col)) for col in METRICS_COLUMNS))
    return lines


def write_metrics(rows: Sequence[MetricsRow], csv_path: Path, jsonl_path: Optional[Path] = None) -> None:
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    csv_path.write_text("\n".join(metrics_csv_lines(rows)) + "\n")
    if jsonl_path is not None:
        with open(jsonl_path, "w") as fh:
            for r in rows:
                fh.write(json.dumps(dataclasses.asdict(r)) + "\n")


def read_metrics(csv_path: Path) -> list[MetricsRow]:
    lines = Path(csv_path).read_text().splitlines()
    if not lines or lines[0].split(",") != METRICS_COLUMNS:
        raise ConfigError(f"unexpected metrics header in {csv_path}")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        vals = dict(zip(METRICS_COLUMNS, parts))
        rows.append(
            MetricsRow(
                iteration=int(vals["iteration"]),
                strategy=vals["strategy"],
                mean_selected_reward=float(vals["mean_selected_reward"]),
                mean_abs_advantage=float(vals["mean_abs_advantage"]),
                mean_realized_variance=float(vals["mean_realized_variance"]),
                mean_true_variance=float(vals["mean_true_variance"]) if vals["mean_true_variance"] else None,
                judge_reward_mean=float(vals["judge_reward_mean"]) if vals["judge_reward_mean"] else None,
                baseline_b=float(vals["baseline_b"]) if vals["baseline_b"] else None,
                failure_rate=float(vals["failure_rate"]),
                skill=float(vals["skill"]) if vals["skill"] else None,
                wall_ms=0.0,
            )
        )
    return rows


# --------------------------------------------------------------------------
# Experiment configuration
# --------------------------------------------------------------------------


@dataclass
class PoolSpec:
    preset: Optional[str] = "hard"
    size: int = 512
    file: Optional[str] = None


@dataclass
class ExperimentSpec:
    run: RunConfig = field(default_factory=RunConfig)
    pool: PoolSpec = field(default_factory=PoolSpec)
    iterations: int = 200
    seeds: list[int] = field(default_factory=lambda: [0])
    strategies: list[str] = field(default_factory=list)  # empty: use run.strategy
    out_dir: str = "runs/out"

    def validate(self) -> None:
        self.run.validate()
        if self.iterations < 1:
            raise ConfigError("iteration budget must be >= 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.pool.file is None and self.pool.preset is None:
            raise ConfigError("pool needs either a preset or a file")

    def strategy_list(self) -> list[str]:
        return list(self.strategies) if self.strategies else [self.run.strategy]


_SUBCONFIGS = {"judge": JudgeConfig, "sec": SecConfig, "adcl": AdclConfig, "pcl": PclConfig, "sim": SimConfig}


def _build(cls, data: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in [{where}]")
    return cls(**data)


def run_config_from_dict(data: dict) -> RunConfig:
    data = dict(data or {})
    kwargs = {}
    for name, cls in _SUBCONFIGS.items():
        if name in data:
            section = data.pop(name)
            if not isinstance(section, dict):
                raise ConfigError(f"[run.{name}] must be a mapping")
            kwargs[name] = _build(cls, section, f"run.{name}")
    cfg = _build(RunConfig, {**data, **kwargs}, "run")
    try:
        cfg.validate()
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def run_config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def spec_from_dict(data: dict) -> ExperimentSpec:
    data = dict(data or {})
    run = run_config_from_dict(data.pop("run", {}))
    exp = data.pop("experiment", {})
    if data:
        raise ConfigError(f"unknown top-level section(s) {sorted(data)}")
    pool_data = exp.pop("pool", {}) if isinstance(exp, dict) else {}
    pool = _build(PoolSpec, pool_data, "experiment.pool")
    spec = _build(ExperimentSpec, {**exp, "run": run, "pool": pool}, "experiment")
    spec.validate()
    return spec


def spec_to_dict(spec: ExperimentSpec) -> dict:
    return {
        "run": run_config_to_dict(spec.run),
        "experiment": {
            "pool": dataclasses.asdict(spec.pool),
            "iterations": spec.iterations,
            "seeds": list(spec.seeds),
            "strategies": list(spec.strategies),
            "out_dir": spec.out_dir,
        },
    }


def load_spec(path: str | Path) -> ExperimentSpec:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config root of {p} must be a mapping")
    return spec_from_dict(data)


def save_spec(spec: ExperimentSpec, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(spec_to_dict(spec), sort_keys=False))


# --------------------------------------------------------------------------
# Running
# --------------------------------------------------------------------------


def build_pool(spec: ExperimentSpec, seed: int) -> list[Prompt]:
    """Pool for one run: preset pools are drawn from the run seed (each
    seed is an independent replicate); a pool file is fixed across seeds."""
    if spec.pool.file:
        return load_pool(spec.pool.file)
    return generate_pool(
        spec.pool.preset,
        spec.pool.size,
        seed,
        difficulty_scale=spec.run.sim.difficulty_scale,
        skill=spec.run.sim.skill_init,
    )


def make_selector(strategy: str, prompts: Sequence[Prompt], config: RunConfig, env: SimEnvironment) -> Selector:
    if strategy == "metis":
        return MetisSelector(prompts, config, env)
    if strategy == "uniform":
        return UniformSelector(prompts, config)
    if strategy == "oracle":
        return OracleSelector(prompts, config, env)
    if strategy == "sec":
        return SecSelector(prompts, config)
    if strategy == "adcl":
        return AdclSelector(prompts, config, env)
    if strategy == "pcl":
        return PclSelector(prompts, config, env)
    raise ConfigError(f"unknown strategy {strategy!r}")


def run_single(
    config: RunConfig, prompts: Sequence[Prompt], iterations: int
) -> tuple[list[MetricsRow], Selector, SimEnvironment]:
    """One seeded run of one strategy over the given pool."""
    config.validate()
    env = SimEnvironment(prompts, config)
    selector = make_selector(config.strategy, prompts, config, env)
    rows = []
    for t in range(1, iterations + 1):
        report = run_iteration(selector, env, t)
        rows.append(MetricsRow.from_report(report))
    return rows, selector, env


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: dict[tuple[str, int], list[MetricsRow]]  # (strategy, seed) -> trajectory
    summary: dict
    out_dir: Optional[Path] = None

    def trajectory(self, strategy: str, seed: int) -> list[MetricsRow]:
        return self.rows[(strategy, seed)]


def _seed_aggregate(rows: Sequence[MetricsRow], metric: str) -> Optional[float]:
    vals = [getattr(r, metric) for r in rows if getattr(r, metric) is not None]
    if not vals:
        return None
    return float(np.mean(vals))


def final_skill(rows: Sequence[MetricsRow]) -> Optional[float]:
    return rows[-1].skill if rows else None


def sign_test(xs: Sequence[float], ys: Sequence[float]) -> float:
    """One-sided sign test that x tends to exceed y (ties dropped)."""
    wins = sum(1 for x, y in zip(xs, ys) if x > y)
    losses = sum(1 for x, y in zip(xs, ys) if x < y)
    n = wins + losses
    if n == 0:
        return 1.0
    return float(binomtest(wins, n, alternative="greater").pvalue)


def summarize(rows: dict[tuple[str, int], list[MetricsRow]], seeds: Sequence[int]) -> dict:
    strategies = sorted({s for s, _ in rows})
    summary: dict = {"strategies": {}, "sign_tests": {}}
    per_seed: dict[str, dict[str, list]] = {}
    for strat in strategies:
        agg: dict[str, list] = {m: [] for m in SUMMARY_METRICS}
        agg["final_skill"] = []
        for seed in seeds:
            traj = rows[(strat, seed)]
            for m in SUMMARY_METRICS:
                agg[m].append(_seed_aggregate(traj, m))
            agg["final_skill"].append(final_skill(traj))
        per_seed[strat] = agg
        summary["strategies"][strat] = {
            m: {
                "mean": _mean_or_none(vals),
                "std": _std_or_none(vals),
            }
            for m, vals in agg.items()
        }
    for a in strategies:
        for b in strategies:
            if a == b:
                continue
            key = f"{a}>{b}"
            tests = {}
            for metric in ("mean_realized_variance", "final_skill"):
                xs = per_seed[a][metric]
                ys = per_seed[b][metric]
                if any(v is None for v in xs + ys):
                    continue
                tests[metric] = sign_test(xs, ys)
            summary["sign_tests"][key] = tests
    return summary


def _mean_or_none(vals) -> Optional[float]:
    vs = [v for v in vals if v is not None]
    return float(np.mean(vs)) if vs else None


def _std_or_none(vals) -> Optional[float]:
    vs = [v for v in vals if v is not None]
    return float(np.std(vs)) if vs else None


def run_experiment(spec: ExperimentSpec, write: bool = True) -> ExperimentResult:
    """Run every (strategy, seed) pair, write metrics files and a summary."""
    spec.validate()
    out_dir = Path(spec.out_dir)
    if write:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        try:
            probe.write_text("")
        finally:
            if probe.exists():
                probe.unlink()
    all_rows: dict[tuple[str, int], list[MetricsRow]] = {}
    for strategy in spec.strategy_list():
        for seed in spec.seeds:
            config = replace(spec.run, strategy=strategy, seed=seed)
            pool = build_pool(spec, seed)
            rows, _, _ = run_single(config, pool, spec.iterations)
            all_rows[(strategy, seed)] = rows
            if write:
                base = out_dir / f"metrics_{strategy}_seed{seed}"
                write_metrics(rows, base.with_suffix(".csv"), base.with_suffix(".jsonl"))
    summary = summarize(all_rows, spec.seeds)
    if write:
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return ExperimentResult(spec=spec, rows=all_rows, summary=summary, out_dir=out_dir if write else None)


# --------------------------------------------------------------------------
# Ablations
# --------------------------------------------------------------------------

ABLATION_KNOBS = {
    "K": "memory_k",
    "memory_k": "memory_k",
    "lambda": "judge_lambda",
    "judge_lambda": "judge_lambda",
}

# "Final" window for ablation comparisons: the trailing fraction of the
# trajectory, averaged to damp single-iteration noise.
FINAL_WINDOW = 0.2


def final_window_mean(rows: Sequence[MetricsRow], metric: str) -> Optional[float]:
    k = max(1, int(math.ceil(len(rows) * FINAL_WINDOW)))
    vals = [getattr(r, metric) for r in rows[-k:] if getattr(r, metric) is not None]
    return float(np.mean(vals)) if vals else None


@dataclass
class AblationResult:
    knob: str
    values: list
    table: list[dict]
    per_seed: dict  # value -> {metric: [per-seed finals]}


def run_ablation(spec: ExperimentSpec, knob: str, values: Sequence, write: bool = True) -> AblationResult:
    """Re-run the experiment once per knob value with shared seeds."""
    if knob not in ABLATION_KNOBS:
        raise ConfigError(f"unknown ablation knob {knob!r}; choose K or lambda")
    field_name = ABLATION_KNOBS[knob]
    if not values:
        raise ConfigError("ablation needs at least one knob value")
    table = []
    per_seed: dict = {}
    out_dir = Path(spec.out_dir)
    for value in values:
        cast = int(value) if field_name == "memory_k" else float(value)
        sub = ExperimentSpec(
            run=replace(spec.run, **{field_name: cast}),
            pool=spec.pool,
            iterations=spec.iterations,
            seeds=list(spec.seeds),
            strategies=spec.strategies,
            out_dir=str(out_dir / f"{field_name}_{value}"),
        )
        result = run_experiment(sub, write=write)
        finals = {m: [] for m in ("mean_realized_variance", "judge_reward_mean", "failure_rate")}
        for seed in spec.seeds:
            traj = result.rows[(sub.strategy_list()[0], seed)]
            for m in finals:
                finals[m].append(final_window_mean(traj, m))
        per_seed[cast] = finals
        table.append(
            {
                "knob": field_name,
                "value": cast,
                "final_mean_realized_variance": _mean_or_none(finals["mean_realized_variance"]),
                "final_judge_reward_mean": _mean_or_none(finals["judge_reward_mean"]),
                "final_failure_rate": _mean_or_none(finals["failure_rate"]),
            }
        )
    if write:
        out_dir.mkdir(parents=True, exist_ok=True)
        cols = list(table[0])
        lines = [",".join(cols)]
        for row in table:
            lines.append(",".join(_cell(row[c]) for c in cols))
        (out_dir / f"ablation_{field_name}.csv").write_text("\n".join(lines) + "\n")
    return AblationResult(knob=field_name, values=list(values), table=table, per_seed=per_seed)
