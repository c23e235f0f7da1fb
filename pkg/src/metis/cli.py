"""Command-line interface.

Exit codes: 0 success, 1 configuration/usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .core import DomainError, RunConfig
from .harness import ConfigError, load_spec, run_ablation, run_experiment
from .judge import parse_judgment
from .llm_adapter import replay_session
from .sim import POOL_PRESETS, SimEnvironment, generate_pool, save_pool

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; the CLI contract is 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="metis", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config", help="YAML experiment config")
    p_run.add_argument("--seed", type=int, help="override: run only this seed")
    p_run.add_argument("--out-dir", help="override output directory")
    p_run.add_argument("--strategy", help="override: run only this strategy")

    p_abl = sub.add_parser("ablate", help="sweep one knob with shared seeds")
    p_abl.add_argument("config")
    p_abl.add_argument("--knob", required=True, choices=["K", "lambda", "memory_k", "judge_lambda"])
    p_abl.add_argument("--values", required=True, help="comma-separated knob values")
    p_abl.add_argument("--seed", type=int)
    p_abl.add_argument("--out-dir")
    p_abl.add_argument("--strategy")

    p_pool = sub.add_parser("gen-pool", help="generate a synthetic prompt pool file")
    p_pool.add_argument("--preset", required=True, choices=sorted(POOL_PRESETS))
    p_pool.add_argument("--size", type=int, default=512)
    p_pool.add_argument("--out", required=True)
    p_pool.add_argument("--seed", type=int, default=0)

    p_parse = sub.add_parser("parse-judgment", help="run the boxed-value parser on a saved response")
    p_parse.add_argument("file")

    p_replay = sub.add_parser("replay", help="offline replay of a live session journal")
    p_replay.add_argument("journal")

    return parser


def _apply_overrides(spec, args):
    if args.seed is not None:
        spec.seeds = [args.seed]
    if args.out_dir:
        spec.out_dir = args.out_dir
    if getattr(args, "strategy", None):
        spec.strategies = [args.strategy]
        spec.run.strategy = args.strategy
        spec.run.validate()
    return spec


def cmd_run(args) -> int:
    spec = _apply_overrides(load_spec(args.config), args)
    result = run_experiment(spec)
    print(f"wrote metrics for {len(result.rows)} run(s) to {result.out_dir}")
    for strat, stats in sorted(result.summary["strategies"].items()):
        mrv = stats["mean_realized_variance"]["mean"]
        fs = stats["final_skill"]["mean"]
        fs_text = f"{fs:.4f}" if fs is not None else "n/a"
        print(f"  {strat}: mean_realized_variance={mrv:.5f} final_skill={fs_text}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    spec = _apply_overrides(load_spec(args.config), args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    result = run_ablation(spec, args.knob, values)
    header = list(result.table[0])
    print(",".join(header))
    for row in result.table:
        print(",".join("" if row[c] is None else str(row[c]) for c in header))
    return EXIT_OK


def cmd_gen_pool(args) -> int:
    prompts = generate_pool(args.preset, args.size, args.seed)
    save_pool(prompts, args.out)
    env = SimEnvironment(prompts, RunConfig(seed=args.seed))
    mean_success = float(np.mean([env.success_prob(p) for p in prompts]))
    print(f"wrote {len(prompts)} prompts to {args.out} (initial mean success {mean_success:.4f})")
    return EXIT_OK


def cmd_parse_judgment(args) -> int:
    path = Path(args.file)
    if not path.is_file():
        raise ConfigError(f"response file not found: {path}")
    result = parse_judgment(path.read_text())
    if result.ok:
        print(f"ok {result.value:g}")
    else:
        print(f"failure {result.reason} (fallback {result.prediction:g})")
    return EXIT_OK


def cmd_replay(args) -> int:
    path = Path(args.journal)
    if not path.is_file():
        raise ConfigError(f"journal not found: {path}")
    rows = replay_session(path)
    cols = [
        "iteration",
        "mean_selected_reward",
        "mean_realized_variance",
        "judge_reward_mean",
        "baseline_b",
        "failure_rate",
    ]
    print(",".join(cols))
    for row in rows:
        print(",".join(repr(getattr(row, c)) if c != "iteration" else str(row.iteration) for c in cols))
    return EXIT_OK


_COMMANDS = {
    "run": cmd_run,
    "ablate": cmd_ablate,
    "gen-pool": cmd_gen_pool,
    "parse-judgment": cmd_parse_judgment,
    "replay": cmd_replay,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
