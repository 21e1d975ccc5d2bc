"""Stage 2: Lagrangian primal-dual Bayesian optimization of slice actions.

Trains a QoE surrogate in the augmented simulator with parallel Thompson
sampling; the SLA constraint enters the objective through an adaptive
multiplier updated by projected sub-gradient steps.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bnn, metrics, slicesim
from .errors import AtlasError, InfeasibleError
from .seeds import derive_seed


@dataclass
class Stage2Config:
    params: slicesim.SimulationParams = field(
        default_factory=slicesim.SimulationParams.default
    )
    iterations: int = 400
    parallel: int = 8
    candidates: int = 10_000
    warmup: int = 40
    qoe_requirement: float = 0.9   # E
    latency_threshold_ms: float = 300.0  # Y
    latency_threshold_max_ms: float = 1000.0  # normalizes Y in the BNN input
    dual_step: float = 0.1  # epsilon
    traffic_levels: tuple = (1, 2, 3, 4)
    distance_m: float = 1.0
    duration_s: float = 60.0
    epochs_warmup: int = 200
    epochs_per_round: int = 8
    batch_size: int = 128


@dataclass
class Incumbent:
    action: slicesim.ConfigAction
    usage: float
    qoe: float
    iteration: int


@dataclass
class Stage2Result:
    policy: bnn.BnnModel
    best_action: slicesim.ConfigAction
    lambda_final: float
    ledger: metrics.RunLedger
    incumbents: dict  # traffic level -> Incumbent


def policy_input(traffic: int, threshold_ms: float, action_norm: np.ndarray,
                 threshold_max_ms: float) -> np.ndarray:
    """The 8-dim surrogate input: (traffic/4, Y/Ymax, normalized action)."""
    head = np.array([traffic / 4.0, threshold_ms / threshold_max_ms])
    return np.concatenate([head, np.asarray(action_norm, dtype=float)])


def _policy_inputs(traffic, threshold_ms, actions_norm, threshold_max_ms):
    head = np.tile(
        [traffic / 4.0, threshold_ms / threshold_max_ms], (len(actions_norm), 1)
    )
    return np.hstack([head, actions_norm])


def offline_train(cfg: Stage2Config, run_seed: int) -> Stage2Result:
    """Offline constrained-optimization loop over configuration actions."""
    if cfg.warmup >= cfg.iterations:
        raise AtlasError("warmup must be smaller than iterations")
    dim_a = len(slicesim.ACTION_BOUNDS)
    ledger = metrics.RunLedger(stage="stage2")
    lam = 0.0

    inputs: list[np.ndarray] = []
    qoes: list[float] = []
    incumbents: dict[int, Incumbent] = {}

    def query(action_norm: np.ndarray, traffic: int, seed: int):
        action = slicesim.ConfigAction.from_normalized(action_norm)
        state = slicesim.NetworkState(traffic=traffic, distance_m=cfg.distance_m)
        trace = slicesim.simulate(cfg.params, action, state, cfg.duration_s, seed)
        return metrics.qoe(trace, cfg.latency_threshold_ms), metrics.resource_usage(action)

    def record(iteration, action_norm, traffic, q, usage, seed):
        inputs.append(policy_input(traffic, cfg.latency_threshold_ms, action_norm,
                                   cfg.latency_threshold_max_ms))
        qoes.append(q)
        ledger.add(iter=iteration, kind="offline", x_or_a=action_norm,
                   usage=usage, qoe=q, lam=lam, seed=seed)
        if q >= cfg.qoe_requirement:
            cur = incumbents.get(traffic)
            if cur is None or usage < cur.usage:
                incumbents[traffic] = Incumbent(
                    action=slicesim.ConfigAction.from_normalized(action_norm),
                    usage=usage, qoe=q, iteration=iteration,
                )

    def draw_traffic(seed: int) -> int:
        rng = np.random.default_rng([int(seed), 0x7F])
        return int(rng.choice(cfg.traffic_levels))

    for i in range(cfg.warmup):
        rng = np.random.default_rng([derive_seed(run_seed, "stage2", i, 0, "cand"), 0])
        a = rng.uniform(size=dim_a)
        traffic = draw_traffic(derive_seed(run_seed, "stage2", i, 0, "traffic"))
        seed = derive_seed(run_seed, "stage2", i, 0, "sim")
        q, usage = query(a, traffic, seed)
        record(i, a, traffic, q, usage, seed)

    model = bnn.bnn_init(dim_a + 2, seed=derive_seed(run_seed, "stage2", "init"))
    bnn.bnn_train(model, np.array(inputs), np.array(qoes), epochs=cfg.epochs_warmup,
                  batch_size=cfg.batch_size,
                  seed=derive_seed(run_seed, "stage2", "warmfit"))

    for it in range(cfg.warmup, cfg.iterations):
        picks, traffics = [], []
        for worker in range(cfg.parallel):
            traffic = draw_traffic(derive_seed(run_seed, "stage2", it, worker, "traffic"))
            rng = np.random.default_rng(
                [derive_seed(run_seed, "stage2", it, worker, "cand"), 0]
            )
            cands = rng.uniform(size=(cfg.candidates, dim_a))
            pred = bnn.bnn_thompson_predict(
                model,
                _policy_inputs(traffic, cfg.latency_threshold_ms, cands,
                               cfg.latency_threshold_max_ms),
                derive_seed(run_seed, "stage2", it, worker, "draw"),
            )
            usage_all = cands.mean(axis=1)
            score = usage_all - lam * (pred - cfg.qoe_requirement)
            picks.append(cands[int(np.argmin(score))])
            traffics.append(traffic)

        seeds = [derive_seed(run_seed, "stage2", it, w, "sim")
                 for w in range(cfg.parallel)]
        with ThreadPoolExecutor(max_workers=cfg.parallel) as pool:
            results = list(pool.map(query, picks, traffics, seeds))
        for a, traffic, (q, usage), seed in zip(picks, traffics, results, seeds):
            record(it, a, traffic, q, usage, seed)

        round_qoes = [q for q, _ in results]
        lam = metrics.dual_update(lam, float(np.mean(round_qoes)),
                                  cfg.qoe_requirement, cfg.dual_step)

        bnn.bnn_train(model, np.array(inputs), np.array(qoes),
                      epochs=cfg.epochs_per_round, batch_size=cfg.batch_size,
                      seed=derive_seed(run_seed, "stage2", it, "fit"))

    if not incumbents:
        raise InfeasibleError(
            f"no action reached QoE {cfg.qoe_requirement}; best achieved "
            f"QoE {max(qoes):.4f}"
        )
    best_traffic = min(incumbents)
    return Stage2Result(
        policy=model,
        best_action=incumbents[best_traffic].action,
        lambda_final=lam,
        ledger=ledger,
        incumbents=incumbents,
    )
