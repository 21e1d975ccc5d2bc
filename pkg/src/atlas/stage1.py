"""Stage 1: parallel Thompson-sampling search over simulator parameters.

Minimizes the weighted discrepancy (KL against the frozen real-network
trace plus a weighted parameter distance) subject to the normalized-space
ball constraint around the original parameters.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bnn, metrics, slicesim
from .errors import AtlasError
from .seeds import derive_seed

BALL_ACCEPTANCE_FLOOR = 1e-4


@dataclass
class Stage1Config:
    x_hat: slicesim.SimulationParams = field(
        default_factory=slicesim.SimulationParams.default
    )
    iterations: int = 300
    parallel: int = 8
    candidates: int = 10_000
    warmup: int | None = None  # default max(20, iterations // 10)
    alpha: float = 7.0
    ball_radius: float = 0.4
    traffic: int = 1
    distance_m: float = 1.0
    duration_s: float = 60.0
    latency_cap_ms: float = metrics.DEFAULT_LATENCY_CAP_MS
    reference_action: slicesim.ConfigAction = field(
        default_factory=lambda: slicesim.ConfigAction(20.0, 20.0, 0.0, 0.0, 0.3, 0.8)
    )
    epochs_warmup: int = 200
    epochs_per_round: int = 8
    batch_size: int = 128

    def resolved_warmup(self) -> int:
        if self.warmup is not None:
            return int(self.warmup)
        return max(20, self.iterations // 10)


@dataclass
class Stage1Result:
    best_params: slicesim.SimulationParams
    best_weighted: float
    best_kl: float
    kl_at_best_weighted: float
    ledger: metrics.RunLedger
    model: bnn.BnnModel


def sample_param_candidates(
    x_hat: slicesim.SimulationParams, ball_radius: float, n: int, seed: int
) -> np.ndarray:
    """n draws uniform on {box intersect ball around normalized x_hat}.

    Uses whichever of box-rejection or ball-rejection has workable
    acceptance; both produce the same uniform distribution on the
    intersection.
    """
    if ball_radius < 0 or n < 1:
        raise AtlasError("ball_radius must be >= 0 and n >= 1")
    dim = len(slicesim.PARAM_BOUNDS)
    center = x_hat.normalized()
    if ball_radius == 0.0:
        return np.tile(center, (n, 1))

    rng = np.random.default_rng([int(seed), 0x5A])
    out = np.empty((0, dim))
    produced, drawn = 0, 0
    # Probe batch decides which sampler is cheaper for this radius.
    probe = rng.uniform(size=(2048, dim))
    box_rate = float(
        np.mean(np.linalg.norm(probe - center, axis=1) <= ball_radius)
    )
    use_box = box_rate >= 0.05
    while len(out) < n:
        m = max(4 * (n - len(out)), 1024)
        if use_box:
            cand = rng.uniform(size=(m, dim))
            keep = np.linalg.norm(cand - center, axis=1) <= ball_radius
        else:
            direction = rng.standard_normal((m, dim))
            direction /= np.linalg.norm(direction, axis=1, keepdims=True)
            radius = ball_radius * rng.uniform(size=(m, 1)) ** (1.0 / dim)
            cand = center + direction * radius
            keep = np.all((cand >= 0.0) & (cand <= 1.0), axis=1)
        out = np.vstack([out, cand[keep]])
        produced += int(keep.sum())
        drawn += m
        if drawn >= 200_000 and produced / drawn < BALL_ACCEPTANCE_FLOOR:
            raise AtlasError(
                f"candidate acceptance rate {produced / drawn:.2e} below "
                f"{BALL_ACCEPTANCE_FLOOR}; increase the ball radius"
            )
    return out[:n]


def search_parameters(
    cfg: Stage1Config,
    reference: slicesim.LatencyTrace,
    run_seed: int,
) -> Stage1Result:
    """Run the parallel posterior-sampling search against the frozen reference trace."""
    state = slicesim.NetworkState(traffic=cfg.traffic, distance_m=cfg.distance_m)
    x_hat_norm = cfg.x_hat.normalized()
    warmup = cfg.resolved_warmup()
    if warmup >= cfg.iterations:
        raise AtlasError("warmup must be smaller than iterations")

    ledger = metrics.RunLedger(stage="stage1")
    X_norm: list[np.ndarray] = []
    kls: list[float] = []

    def query(x_norm: np.ndarray, seed: int) -> float:
        params = slicesim.SimulationParams.from_normalized(x_norm)
        trace = slicesim.simulate(params, cfg.reference_action, state,
                                  cfg.duration_s, seed)
        return metrics.kl_divergence(reference, trace, cfg.latency_cap_ms)

    def record(iteration: int, x_norm: np.ndarray, kl: float, seed: int) -> None:
        X_norm.append(x_norm)
        kls.append(kl)
        ledger.add(iter=iteration, kind="offline", x_or_a=x_norm, kl=kl, seed=seed)

    # Purely random warmup queries.
    for i in range(warmup):
        x = sample_param_candidates(
            cfg.x_hat, cfg.ball_radius, 1, derive_seed(run_seed, "stage1", i, 0, "cand")
        )[0]
        seed = derive_seed(run_seed, "stage1", i, 0, "sim")
        record(i, x, query(x, seed), seed)

    model = bnn.bnn_init(len(x_hat_norm), seed=derive_seed(run_seed, "stage1", "init"))
    bnn.bnn_train(model, np.array(X_norm), np.array(kls), epochs=cfg.epochs_warmup,
                  batch_size=cfg.batch_size,
                  seed=derive_seed(run_seed, "stage1", "warmfit"))

    for it in range(warmup, cfg.iterations):
        picks: list[np.ndarray] = []
        for worker in range(cfg.parallel):
            pick = None
            for attempt in range(2):  # one re-draw on duplicate, then allow
                cands = sample_param_candidates(
                    cfg.x_hat, cfg.ball_radius, cfg.candidates,
                    derive_seed(run_seed, "stage1", it, worker, "cand", attempt),
                )
                pred = bnn.bnn_thompson_predict(
                    model, cands,
                    derive_seed(run_seed, "stage1", it, worker, "draw", attempt),
                )
                dist = np.linalg.norm(cands - x_hat_norm, axis=1)
                pick = cands[int(np.argmin(pred + cfg.alpha * dist))]
                if not any(np.array_equal(pick, p) for p in picks):
                    break
            picks.append(pick)

        seeds = [derive_seed(run_seed, "stage1", it, w, "sim")
                 for w in range(cfg.parallel)]
        with ThreadPoolExecutor(max_workers=cfg.parallel) as pool:
            round_kls = list(pool.map(query, picks, seeds))
        for x, kl, seed in zip(picks, round_kls, seeds):
            record(it, x, kl, seed)

        bnn.bnn_train(model, np.array(X_norm), np.array(kls),
                      epochs=cfg.epochs_per_round, batch_size=cfg.batch_size,
                      seed=derive_seed(run_seed, "stage1", it, "fit"))

    dists = np.linalg.norm(np.array(X_norm) - x_hat_norm, axis=1)
    weighted = np.array(kls) + cfg.alpha * dists
    best = int(np.argmin(weighted))
    return Stage1Result(
        best_params=slicesim.SimulationParams.from_normalized(X_norm[best]),
        best_weighted=float(weighted[best]),
        best_kl=float(np.min(kls)),
        kl_at_best_weighted=float(kls[best]),
        ledger=ledger,
        model=model,
    )
