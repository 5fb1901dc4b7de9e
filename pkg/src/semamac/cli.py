"""Command-line harness: run experiments, query oracles, validate configs.

Subcommands:

* ``run``      - execute (variant, seed) runs for a scenario and emit one CSV
                 per run plus a seed-averaged summary file.
* ``oracle``   - print the optimal allocation for the configured instance.
* ``validate`` - check a config file or preset and report the first violation.
* ``presets``  - list the built-in scenario presets.

Every emitted file carries a schema_version field. Exit codes: 0 success,
2 usage, 3 invalid configuration, 4 enumeration budget exceeded, 5 I/O
failure, 6 runtime/training failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import ExperimentConfig, preset, PRESET_NAMES, normalize_variant
from .errors import (
    ConfigurationError,
    ContractError,
    ResourceBudgetError,
    SemamacError,
    UnsupportedConfigurationError,
)
from .env import OBS_LETTERS
from .fairness import AlphaFairness
from .oracle import brute_force_schedule, optimal_time_share, stationary_throughputs
from .trainer import RunResult, evaluate, run

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_BUDGET = 4
EXIT_IO = 5
EXIT_RUNTIME = 6

RUN_SCHEMA_VERSION = 1
SUMMARY_SCHEMA_VERSION = 1


# ----------------------------------------------------------------------
def _fmt_vec(values) -> str:
    return "[" + ", ".join(f"{v:.6g}" for v in values) + "]"


def _resolve_config(args) -> ExperimentConfig:
    if getattr(args, "preset", None):
        cfg = preset(args.preset)
    elif getattr(args, "config", None):
        cfg = ExperimentConfig.load(args.config)
    else:
        raise ConfigurationError("either --preset or --config is required")
    if getattr(args, "alpha", None) is not None:
        cfg.alpha = math.inf if args.alpha == "inf" else float(args.alpha)
    if getattr(args, "horizon", None) is not None:
        cfg.horizon = args.horizon
    if getattr(args, "seeds", None) is not None:
        cfg.seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    if getattr(args, "variants", None) is not None:
        cfg.variants = [normalize_variant(v) for v in args.variants.split(",")]
    if getattr(args, "throughput_window", None) is not None:
        cfg.throughput_window = args.throughput_window or None
    cfg.validate()
    return cfg


def write_run_csv(path, result: RunResult) -> None:
    """Per-(slot, UE) trajectory rows plus the objective columns."""
    n = result.x_series.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# schema_version={RUN_SCHEMA_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow([
            "t", "ue", "action_mode", "channel", "z", "obs", "assisted_ratio",
            "x", "self_x", "assisted_x", "reward",
            "objective", "objective_alltime", "objective_variant", "epsilon",
        ])
        for t in range(result.n_slots):
            for i in range(n):
                writer.writerow([
                    t, i + 1,
                    "transmit" if result.modes[t, i] else "sense",
                    int(result.channels[t, i]),
                    int(result.z[t, i]),
                    OBS_LETTERS[result.obs[t, i]],
                    f"{result.assisted_ratio[t, i]:.10g}",
                    f"{result.x_series[t, i]:.10g}",
                    f"{result.self_x_series[t, i]:.10g}",
                    f"{result.assisted_x_series[t, i]:.10g}",
                    f"{result.rewards[t]:.10g}",
                    f"{result.objective[t]:.10g}",
                    f"{result.objective_alltime[t]:.10g}",
                    f"{result.objective_variant[t]:.10g}",
                    f"{result.epsilon_series[t]:.10g}",
                ])


def _run_one(payload):
    cfg_dict, seed, variant = payload
    cfg = ExperimentConfig.from_dict(cfg_dict)
    return run(cfg, seed=seed, variant=variant)


def oracle_reference(cfg: ExperimentConfig, grid_step: float = 0.01):
    """Optimal single-channel allocation for the summary, when computable."""
    if cfg.n_channels != 1:
        return None
    matrix = cfg.association_matrix()
    if not matrix.static:
        return None
    try:
        share, objective = optimal_time_share(
            matrix, AlphaFairness(alpha=cfg.alpha), grid_step=grid_step
        )
    except ResourceBudgetError:
        return None
    x = stationary_throughputs(share, matrix)
    return {
        "p": list(share.p),
        "self_throughputs": list(share.p),
        "normalized_throughputs": x.tolist(),
        "objective": objective,
        "grid_step": grid_step,
    }


def run_experiment(cfg: ExperimentConfig, output_dir, tail: int = 1000,
                   workers: int = 1, trajectories: bool = True) -> dict:
    """Execute every (variant, seed) pair, write per-run CSVs and a summary.

    The summary is written last; a failed run leaves no partial summary.
    Returns the summary dict.
    """
    os.makedirs(output_dir, exist_ok=True)
    probe = os.path.join(output_dir, ".write_probe")
    with open(probe, "w", encoding="utf-8") as fh:
        fh.write("ok")
    os.remove(probe)

    jobs = [(cfg.to_dict(), seed, variant) for variant in cfg.variants for seed in cfg.seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]

    fairness = AlphaFairness(alpha=cfg.alpha)
    tail = min(tail, cfg.horizon + 1)
    summary_variants = {}
    for (job, result) in zip(jobs, results):
        _, seed, variant = job
        if trajectories:
            name = f"{variant}_seed{seed}.csv"
            write_run_csv(os.path.join(output_dir, name), result)
        stats = evaluate(result, fairness, tail)
        bucket = summary_variants.setdefault(variant, {
            "seeds": [], "objective_tail_mean": [], "objective_alltime_tail_mean": [],
            "objective_variant_tail_mean": [], "reward_tail_mean": [],
            "x_alltime": [], "self_x_alltime": [], "assisted_x_alltime": [],
        })
        bucket["seeds"].append(seed)
        for key in ("objective_tail_mean", "objective_alltime_tail_mean",
                    "objective_variant_tail_mean", "reward_tail_mean",
                    "x_alltime", "self_x_alltime", "assisted_x_alltime"):
            bucket[key].append(stats[key])

    for variant, bucket in summary_variants.items():
        bucket["objective_tail_seed_mean"] = float(np.mean(bucket["objective_tail_mean"]))
        bucket["objective_alltime_tail_seed_mean"] = float(
            np.mean(bucket["objective_alltime_tail_mean"]))
        bucket["objective_variant_tail_seed_mean"] = float(
            np.mean(bucket["objective_variant_tail_mean"]))
        bucket["x_alltime_seed_mean"] = np.mean(bucket["x_alltime"], axis=0).tolist()
        bucket["self_x_alltime_seed_mean"] = np.mean(bucket["self_x_alltime"], axis=0).tolist()
        bucket["assisted_x_alltime_seed_mean"] = np.mean(
            bucket["assisted_x_alltime"], axis=0).tolist()

    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "tail": tail,
        "oracle": oracle_reference(cfg),
        "variants": summary_variants,
    }
    with open(os.path.join(output_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


# ----------------------------------------------------------------------
def cmd_run(args) -> int:
    cfg = _resolve_config(args)
    run_experiment(cfg, args.output_dir, tail=args.tail, workers=args.workers,
                   trajectories=not args.no_trajectories)
    print(f"wrote {len(cfg.variants) * len(cfg.seeds)} run files and summary.json "
          f"to {args.output_dir}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _resolve_config(args)
    fairness = AlphaFairness(alpha=cfg.alpha)
    matrix = cfg.association_matrix()
    alpha_label = "inf" if math.isinf(cfg.alpha) else f"{cfg.alpha:g}"
    if cfg.n_channels == 1:
        share, objective = optimal_time_share(matrix, fairness, grid_step=args.grid_step)
        x = stationary_throughputs(share, matrix)
        print(f"alpha: {alpha_label}")
        print(f"self throughputs: {_fmt_vec(share.p)}")
        print(f"normalized throughputs: {_fmt_vec(x)}")
        print(f"objective: {objective:.10g}")
    else:
        schedule, objective = brute_force_schedule(
            matrix, cfg.n_channels, args.period, fairness
        )
        print(f"alpha: {alpha_label}")
        print(f"period: {args.period}")
        print(f"schedule (flat action indices per slot): {schedule.tolist()}")
        print(f"objective: {objective:.10g}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _resolve_config(args)
    print(f"configuration ok: N={cfg.n_ues}, C={cfg.n_channels}, K={cfg.n_segments}, "
          f"horizon={cfg.horizon}, alpha={'inf' if math.isinf(cfg.alpha) else cfg.alpha}")
    return EXIT_OK


def cmd_presets(args) -> int:
    for name in PRESET_NAMES:
        cfg = preset(name)
        print(f"{name}: N={cfg.n_ues}, C={cfg.n_channels}, K={cfg.n_segments}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semamac",
        description="Semantic-aware multiple access: simulator, oracles, learners.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p):
        p.add_argument("--preset", help=f"scenario preset ({', '.join(PRESET_NAMES)})")
        p.add_argument("--config", help="path to a JSON config file")
        p.add_argument("--alpha", help="fairness exponent (number or 'inf')")
        p.add_argument("--horizon", type=int, help="number of slots minus one")
        p.add_argument("--seeds", help="comma-separated seed list")
        p.add_argument("--variants", help="comma-separated variants (sama, ma, rnd)")
        p.add_argument("--throughput-window", type=int, dest="throughput_window",
                       help="throughput averaging window (0 = full horizon)")

    p_run = sub.add_parser("run", help="execute an experiment")
    add_config_flags(p_run)
    p_run.add_argument("--output-dir", required=True)
    p_run.add_argument("--tail", type=int, default=1000,
                       help="tail length for summary averages")
    p_run.add_argument("--workers", type=int, default=1,
                       help="parallel worker processes for (variant, seed) runs")
    p_run.add_argument("--no-trajectories", action="store_true",
                       help="skip per-run CSVs, write only the summary")
    p_run.set_defaults(func=cmd_run)

    p_oracle = sub.add_parser("oracle", help="print the optimal allocation")
    add_config_flags(p_oracle)
    p_oracle.add_argument("--grid-step", type=float, default=0.01, dest="grid_step")
    p_oracle.add_argument("--period", type=int, default=4,
                          help="schedule period for multi-channel search")
    p_oracle.set_defaults(func=cmd_oracle)

    p_val = sub.add_parser("validate", help="validate a config or preset")
    add_config_flags(p_val)
    p_val.set_defaults(func=cmd_validate)

    p_pre = sub.add_parser("presets", help="list scenario presets")
    p_pre.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        if "unknown preset" in str(exc) or "unknown variant" in str(exc):
            print(f"usage error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceBudgetError as exc:
        print(f"budget error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (UnsupportedConfigurationError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SemamacError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
