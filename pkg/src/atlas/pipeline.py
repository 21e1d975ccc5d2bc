"""End-to-end orchestration: stage 1 → stage 2 → oracle → stage 3 with
persisted artifacts, stage selection, and resume from prior outputs."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import bnn as bnn_mod
from . import metrics, oracle, slicesim, stage1, stage2, stage3
from .config import Config, load_config
from .errors import ConfigError
from .seeds import derive_seed


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path: Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def build_twin(cfg: Config) -> slicesim.RealTwin:
    sigma_res = float(cfg.require("twin.sigma_res"))
    params = cfg.get_floats("twin.params", slicesim.DEFAULT_TWIN_PARAMS)
    return slicesim.RealTwin(
        params=slicesim.SimulationParams.from_array(np.array(params)),
        sigma_res=sigma_res,
    )


def _x_hat(cfg: Config) -> slicesim.SimulationParams:
    vals = cfg.get_floats("sim.x_hat", slicesim.DEFAULT_PARAMS)
    return slicesim.SimulationParams.from_array(np.array(vals))


def build_stage1_config(cfg: Config) -> stage1.Stage1Config:
    ref = cfg.get_floats("stage1.reference_action", (20.0, 20.0, 0.0, 0.0, 0.3, 0.8))
    return stage1.Stage1Config(
        x_hat=_x_hat(cfg),
        iterations=cfg.get_int("stage1.iterations", 300),
        parallel=cfg.get_int("stage1.parallel", 8),
        candidates=cfg.get_int("stage1.candidates", 10_000),
        warmup=cfg.get_int("stage1.warmup", 0) or None,
        alpha=cfg.get_float("stage1.alpha", 7.0),
        ball_radius=cfg.get_float("stage1.ball_radius", 0.4),
        traffic=cfg.get_int("sim.traffic", 1),
        distance_m=cfg.get_float("sim.distance_m", 1.0),
        duration_s=cfg.get_float("sim.duration_s", 60.0),
        reference_action=slicesim.ConfigAction(*ref),
        epochs_warmup=cfg.get_int("stage1.epochs_warmup", 200),
        epochs_per_round=cfg.get_int("stage1.epochs_per_round", 8),
    )


def build_stage2_config(cfg: Config,
                        params: slicesim.SimulationParams) -> stage2.Stage2Config:
    return stage2.Stage2Config(
        params=params,
        iterations=cfg.get_int("stage2.iterations", 400),
        parallel=cfg.get_int("stage2.parallel", 8),
        candidates=cfg.get_int("stage2.candidates", 10_000),
        warmup=cfg.get_int("stage2.warmup", 40),
        qoe_requirement=cfg.get_float("stage2.qoe_requirement", 0.9),
        latency_threshold_ms=cfg.get_float("stage2.latency_threshold_ms", 300.0),
        dual_step=cfg.get_float("stage2.dual_step", 0.1),
        traffic_levels=cfg.get_ints("stage2.traffic_levels", (1, 2, 3, 4)),
        distance_m=cfg.get_float("sim.distance_m", 1.0),
        duration_s=cfg.get_float("sim.duration_s", 60.0),
        epochs_warmup=cfg.get_int("stage2.epochs_warmup", 200),
        epochs_per_round=cfg.get_int("stage2.epochs_per_round", 8),
    )


def build_stage3_config(cfg: Config,
                        params: slicesim.SimulationParams) -> stage3.Stage3Config:
    return stage3.Stage3Config(
        params=params,
        iterations=cfg.get_int("stage3.iterations", 100),
        accel_rounds=cfg.get_int("stage3.accel_rounds", 20),
        candidates=cfg.get_int("stage3.candidates", 10_000),
        qoe_requirement=cfg.get_float("stage2.qoe_requirement", 0.9),
        latency_threshold_ms=cfg.get_float("stage2.latency_threshold_ms", 300.0),
        dual_step=cfg.get_float("stage3.dual_step", 0.1),
        rho=cfg.get_float("stage3.rho", 0.1),
        beta_cap=cfg.get_float("stage3.beta_cap", 10.0),
        n_mc=cfg.get_int("stage3.n_mc", 30),
        traffic=cfg.get_int("sim.traffic", 1),
        distance_m=cfg.get_float("sim.distance_m", 1.0),
        duration_s=cfg.get_float("sim.duration_s", 60.0),
    )


def run_stage1(cfg: Config, twin: slicesim.RealTwin, run_seed: int,
               out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    s1 = build_stage1_config(cfg)
    state = slicesim.NetworkState(traffic=s1.traffic, distance_m=s1.distance_m)
    reference = slicesim.collect_reference(
        twin, state, s1.reference_action, s1.duration_s,
        derive_seed(run_seed, "reference"), path=out / "reference.csv",
    )
    baseline_trace = slicesim.simulate(
        s1.x_hat, s1.reference_action, state, s1.duration_s,
        derive_seed(run_seed, "stage1", "d0"),
    )
    d0 = metrics.kl_divergence(reference, baseline_trace, s1.latency_cap_ms)
    result = stage1.search_parameters(s1, reference, run_seed)
    result.ledger.save(out / "ledger.jsonl")
    summary = {
        "best_params": [float(v) for v in result.best_params.as_array()],
        "best_weighted": result.best_weighted,
        "best_kl": result.best_kl,
        "kl_at_best_weighted": result.kl_at_best_weighted,
        "baseline_kl": float(d0),
    }
    _write_json(out / "result.json", summary)
    return summary


def load_stage1_params(path: Path) -> slicesim.SimulationParams:
    path = Path(path)
    if path.is_dir():
        path = path / "result.json"
    if not path.exists():
        raise ConfigError(f"no stage-1 result at {path}")
    payload = _read_json(path)
    return slicesim.SimulationParams.from_array(np.array(payload["best_params"]))


def run_stage2(cfg: Config, params: slicesim.SimulationParams, run_seed: int,
               out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    s2 = build_stage2_config(cfg, params)
    result = stage2.offline_train(s2, run_seed)
    result.ledger.save(out / "ledger.jsonl")
    bnn_mod.save_checkpoint(result.policy, out / "policy.pt")
    summary = {
        "best_action": [float(v) for v in result.best_action.as_array()],
        "lambda_final": result.lambda_final,
        "incumbents": {
            str(traffic): {
                "action": [float(v) for v in inc.action.as_array()],
                "usage": inc.usage,
                "qoe": inc.qoe,
                "iteration": inc.iteration,
            }
            for traffic, inc in result.incumbents.items()
        },
    }
    _write_json(out / "result.json", summary)
    return summary


def run_twin_oracle(cfg: Config, twin: slicesim.RealTwin, run_seed: int,
                    out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    result = oracle.run_oracle(
        twin,
        traffic=cfg.get_int("sim.traffic", 1),
        qoe_requirement=cfg.get_float("stage2.qoe_requirement", 0.9),
        latency_threshold_ms=cfg.get_float("stage2.latency_threshold_ms", 300.0),
        duration_s=cfg.get_float("sim.duration_s", 60.0),
        run_seed=run_seed,
        fractions=cfg.get_floats("oracle.fractions", oracle.DEFAULT_FRACTIONS),
        distance_m=cfg.get_float("sim.distance_m", 1.0),
    )
    oracle.save_oracle(result, out / "twin.json")
    return result


def run_stage3(cfg: Config, params: slicesim.SimulationParams,
               stage2_summary: dict, policy: bnn_mod.BnnModel,
               oracle_ref: dict, twin: slicesim.RealTwin, run_seed: int,
               out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    s3 = build_stage3_config(cfg, params)
    first_action = slicesim.ConfigAction.from_array(
        np.array(stage2_summary["best_action"])
    )
    state, ledger = stage3.online_learn(
        s3, policy, stage2_summary["lambda_final"], first_action, twin,
        reference_usage=oracle_ref["usage"], reference_qoe=oracle_ref["qoe"],
        run_seed=run_seed,
    )
    ledger.save(out / "ledger.jsonl")
    avg_u, avg_q = ledger.average_regrets()
    summary = {
        "lambda_final": state.lam,
        "avg_usage_regret": avg_u,
        "avg_qoe_regret": avg_q,
        "usage_regret_series": ledger.usage_regret_series,
        "qoe_regret_series": ledger.qoe_regret_series,
    }
    _write_json(out / "result.json", summary)
    return summary


def run_pipeline(config_path, stages=(1, 2, 3), params_from=None,
                 seed_override: int | None = None) -> Path:
    cfg = load_config(config_path) if not isinstance(config_path, Config) \
        else config_path
    run_seed = seed_override if seed_override is not None \
        else cfg.get_int("run.seed", 0)
    run_dir = Path(cfg.get_str("run.out_dir", "runs/default"))
    run_dir.mkdir(parents=True, exist_ok=True)
    twin = build_twin(cfg)
    stages = set(int(s) for s in stages)
    unknown = stages - {1, 2, 3}
    if unknown:
        raise ConfigError(f"unknown stages {sorted(unknown)}; valid: 1, 2, 3")

    if 1 in stages:
        s1_summary = run_stage1(cfg, twin, run_seed, run_dir / "stage1")
        params = slicesim.SimulationParams.from_array(
            np.array(s1_summary["best_params"])
        )
    else:
        params = load_stage1_params(
            Path(params_from) if params_from else run_dir / "stage1"
        )

    if 2 in stages:
        s2_summary = run_stage2(cfg, params, run_seed, run_dir / "stage2")
    elif 3 in stages:
        s2_path = run_dir / "stage2" / "result.json"
        if not s2_path.exists():
            raise ConfigError(f"stage 3 needs stage-2 output at {s2_path}")
        s2_summary = _read_json(s2_path)

    if 3 in stages:
        oracle_path = run_dir / "oracle" / "twin.json"
        if oracle_path.exists():
            oracle_ref = oracle.load_oracle(oracle_path)
        else:
            oracle_ref = run_twin_oracle(cfg, twin, run_seed, run_dir / "oracle")
        policy = bnn_mod.load_checkpoint(run_dir / "stage2" / "policy.pt")
        run_stage3(cfg, params, s2_summary, policy, oracle_ref, twin,
                   run_seed, run_dir / "stage3")

    return run_dir
