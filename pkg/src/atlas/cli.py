"""Command-line entry point.

Subcommands: stage1 | stage2 | stage3 | baseline | pipeline | plot-data |
oracle.  `ATLAS_SEED` overrides the configured seed.  Exit codes: 0 ok,
2 config error, 3 infeasible, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import baselines, bnn, oracle, pipeline, plots
from .config import load_config
from .errors import AtlasError, ConfigError


def _resolve_seed(cfg, args) -> int:
    env = os.environ.get("ATLAS_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"ATLAS_SEED is not an integer: {env!r}") from None
    if getattr(args, "seed", None) is not None:
        return args.seed
    return cfg.get_int("run.seed", 0)


def _parse_stages(raw: str) -> tuple:
    try:
        return tuple(int(s) for s in raw.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"bad --stages value {raw!r}; expected e.g. 1,2,3") \
            from None


def _cmd_pipeline(args) -> None:
    run_dir = pipeline.run_pipeline(
        args.config,
        stages=_parse_stages(args.stages),
        params_from=args.params_from,
        seed_override=_resolve_seed(load_config(args.config), args),
    )
    print(f"pipeline complete: {run_dir}")


def _cmd_stage(args, which: int) -> None:
    cfg = load_config(args.config)
    seed = _resolve_seed(cfg, args)
    run_dir = Path(cfg.get_str("run.out_dir", "runs/default"))
    twin = pipeline.build_twin(cfg)
    if which == 1:
        summary = pipeline.run_stage1(cfg, twin, seed, run_dir / "stage1")
    elif which == 2:
        params = pipeline.load_stage1_params(
            Path(args.params_from) if args.params_from else run_dir / "stage1"
        )
        summary = pipeline.run_stage2(cfg, params, seed, run_dir / "stage2")
    else:
        params = pipeline.load_stage1_params(
            Path(args.params_from) if args.params_from else run_dir / "stage1"
        )
        s2_path = run_dir / "stage2" / "result.json"
        if not s2_path.exists():
            raise ConfigError(f"stage 3 needs stage-2 output at {s2_path}")
        with open(s2_path) as fh:
            s2_summary = json.load(fh)
        oracle_path = run_dir / "oracle" / "twin.json"
        if oracle_path.exists():
            oracle_ref = oracle.load_oracle(oracle_path)
        else:
            oracle_ref = pipeline.run_twin_oracle(cfg, twin, seed,
                                                  run_dir / "oracle")
        policy = bnn.load_checkpoint(run_dir / "stage2" / "policy.pt")
        summary = pipeline.run_stage3(cfg, params, s2_summary, policy,
                                      oracle_ref, twin, seed,
                                      run_dir / "stage3")
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))


def _cmd_oracle(args) -> None:
    cfg = load_config(args.config)
    seed = _resolve_seed(cfg, args)
    run_dir = Path(cfg.get_str("run.out_dir", "runs/default"))
    result = pipeline.run_twin_oracle(cfg, pipeline.build_twin(cfg), seed,
                                      run_dir / "oracle")
    print(json.dumps(result, indent=2, sort_keys=True))


def _cmd_baseline(args) -> None:
    cfg = load_config(args.config)
    seed = _resolve_seed(cfg, args)
    run_dir = Path(cfg.get_str("run.out_dir", "runs/default"))
    twin = pipeline.build_twin(cfg)
    bl = baselines.BaselineConfig(
        iterations=cfg.get_int("baseline.iterations", 100),
        candidates=cfg.get_int("baseline.candidates", 10_000),
        qoe_requirement=cfg.get_float("stage2.qoe_requirement", 0.9),
        latency_threshold_ms=cfg.get_float("stage2.latency_threshold_ms", 300.0),
        traffic=cfg.get_int("sim.traffic", 1),
        distance_m=cfg.get_float("sim.distance_m", 1.0),
        duration_s=cfg.get_float("sim.duration_s", 60.0),
    )
    oracle_path = run_dir / "oracle" / "twin.json"
    if oracle_path.exists():
        ref = oracle.load_oracle(oracle_path)
    else:
        ref = pipeline.run_twin_oracle(cfg, twin, seed, run_dir / "oracle")
    if args.method == "gp-ei":
        ledger = baselines.run_gp_ei(twin, bl, seed, ref["usage"], ref["qoe"])
    elif args.method == "gp-ucb":
        ledger = baselines.run_gp_ucb(twin, bl, seed, ref["usage"], ref["qoe"])
    else:
        policy_path = run_dir / "stage2" / "policy.pt"
        if not policy_path.exists():
            raise ConfigError(
                f"offline-filter needs the stage-2 policy at {policy_path}"
            )
        policy = bnn.load_checkpoint(policy_path)
        ledger = baselines.run_offline_surrogate_filter(
            twin, bl, policy, seed, ref["usage"], ref["qoe"]
        )
    out = run_dir / f"baseline-{args.method}"
    out.mkdir(parents=True, exist_ok=True)
    ledger.save(out / "ledger.jsonl")
    avg_u, avg_q = ledger.average_regrets()
    print(json.dumps({"avg_usage_regret": avg_u, "avg_qoe_regret": avg_q}))


def _cmd_plot_data(args) -> None:
    out = plots.emit_plot_data(args.run_dir, args.out)
    print(f"plot data written to {out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="atlas",
        description="Three-stage learn-to-configure pipeline for network "
                    "slicing: simulator calibration, offline constrained "
                    "optimization, and safe online learning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="run config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the configured seed")

    for name in ("stage1", "stage2", "stage3"):
        p = sub.add_parser(name, help=f"run {name} only")
        add_common(p)
        if name != "stage1":
            p.add_argument("--params-from", default=None,
                           help="stage-1 output directory or result.json")

    p = sub.add_parser("pipeline", help="run all requested stages")
    add_common(p)
    p.add_argument("--stages", default="1,2,3",
                   help="comma-separated stage numbers, e.g. 2,3")
    p.add_argument("--params-from", default=None,
                   help="stage-1 output to reuse when stage 1 is skipped")

    p = sub.add_parser("baseline", help="run a comparison method")
    add_common(p)
    p.add_argument("--method", required=True,
                   choices=("gp-ei", "gp-ucb", "offline-filter"))

    p = sub.add_parser("oracle", help="run the brute-force grid oracle")
    add_common(p)

    p = sub.add_parser("plot-data", help="export CSVs and figures from a run")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "pipeline":
            _cmd_pipeline(args)
        elif args.command in ("stage1", "stage2", "stage3"):
            _cmd_stage(args, int(args.command[-1]))
        elif args.command == "baseline":
            _cmd_baseline(args)
        elif args.command == "oracle":
            _cmd_oracle(args)
        elif args.command == "plot-data":
            _cmd_plot_data(args)
    except AtlasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
