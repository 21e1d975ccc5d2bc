"""Brute-force grid oracle: the best feasible configuration on a coarse
per-dimension fraction grid, used as the regret reference and the stage-2
near-optimality yardstick."""

from __future__ import annotations

import itertools
import json

import numpy as np

from . import metrics, slicesim
from .errors import InfeasibleError
from .seeds import derive_seed

DEFAULT_FRACTIONS = (0.0, 0.3, 0.6, 0.9)


def grid_actions(fractions=DEFAULT_FRACTIONS) -> np.ndarray:
    """All normalized actions on the per-dimension fraction grid."""
    dim = len(slicesim.ACTION_BOUNDS)
    return np.array(list(itertools.product(fractions, repeat=dim)), dtype=float)


def run_oracle(
    env,
    traffic: int,
    qoe_requirement: float,
    latency_threshold_ms: float,
    duration_s: float,
    run_seed: int,
    fractions=DEFAULT_FRACTIONS,
    distance_m: float = 1.0,
) -> dict:
    """Evaluate the whole grid against env; return the min-usage feasible
    point as {action_norm, usage, qoe, n_grid, n_feasible}."""
    state = slicesim.NetworkState(traffic=traffic, distance_m=distance_m)
    grid = grid_actions(fractions)
    best = None
    n_feasible = 0
    for idx, a_norm in enumerate(grid):
        action = slicesim.ConfigAction.from_normalized(a_norm)
        seed = derive_seed(run_seed, "oracle", traffic, idx)
        trace = env.query(action, state, duration_s, seed)
        q = metrics.qoe(trace, latency_threshold_ms)
        if q < qoe_requirement:
            continue
        n_feasible += 1
        usage = metrics.resource_usage(action)
        if best is None or usage < best["usage"]:
            best = {
                "action_norm": [float(v) for v in a_norm],
                "usage": float(usage),
                "qoe": float(q),
            }
    if best is None:
        raise InfeasibleError(
            f"grid oracle found no action meeting QoE >= {qoe_requirement} "
            f"at traffic {traffic}"
        )
    best.update(traffic=traffic, n_grid=len(grid), n_feasible=n_feasible)
    return best


def save_oracle(result: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_oracle(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
