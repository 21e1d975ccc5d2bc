"""Stage 3: safe online learning against the real network twin.

A GP learns only the sim-to-real QoE residual on top of the offline
surrogate.  Candidate actions are scored with a clipped randomized UCB
whose exploration weight is Gamma-distributed, and the multiplier is
updated by extra rounds against the augmented simulator between real
queries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import bnn as bnn_mod
from . import gp as gp_mod
from . import metrics, slicesim
from .errors import AtlasError
from .seeds import derive_seed
from .stage2 import _policy_inputs

KAPPA_MIN = 1e-3
ACQ_CLAMP = (0.0, 1.5)


@dataclass
class Stage3Config:
    params: slicesim.SimulationParams = field(
        default_factory=slicesim.SimulationParams.default
    )
    iterations: int = 100
    accel_rounds: int = 20  # N simulator queries between real queries
    candidates: int = 10_000
    qoe_requirement: float = 0.9
    latency_threshold_ms: float = 300.0
    latency_threshold_max_ms: float = 1000.0
    dual_step: float = 0.1
    rho: float = 0.1
    beta_cap: float = 10.0  # B
    n_mc: int = 30
    traffic: int = 1
    distance_m: float = 1.0
    duration_s: float = 60.0
    gp_lengthscale: float = gp_mod.DEFAULT_LENGTHSCALE
    gp_signal_var: float = gp_mod.DEFAULT_SIGNAL_VAR
    gp_noise_var: float = gp_mod.DEFAULT_NOISE_VAR


@dataclass
class OnlineState:
    lam: float
    gp: gp_mod.GpModel
    transitions_x: list = field(default_factory=list)  # (traffic, action) norm
    transitions_g: list = field(default_factory=list)  # Q_real - Q_s
    iteration: int = 0
    pending_action: np.ndarray | None = None  # normalized
    # Every simulator-audited candidate: (usage, normalized action, Q_s).
    # The next real action is drawn from this set, never from raw optimism.
    audited: list = field(default_factory=list)


def crgpucb_beta(n: int, rho: float, cap: float, seed: int) -> float:
    """Gamma-distributed exploration weight, clipped to [0, cap]."""
    if n < 1 or rho <= 0 or cap <= 0:
        raise AtlasError("crgpucb_beta needs n >= 1, rho > 0, cap > 0")
    kappa = max(crgpucb_kappa(n, rho), KAPPA_MIN)
    rng = np.random.default_rng([int(seed), 0xB7])
    return float(np.clip(rng.gamma(shape=kappa, scale=rho), 0.0, cap))


def crgpucb_kappa(n: int, rho: float) -> float:
    return math.log((n * n + 1) / math.sqrt(2.0 * math.pi)) / math.log(1.0 + rho / 2.0)


def gp_input(traffic: int, actions_norm: np.ndarray) -> np.ndarray:
    actions_norm = np.atleast_2d(actions_norm)
    head = np.full((len(actions_norm), 1), traffic / 4.0)
    return np.hstack([head, actions_norm])


def acquisition_qoe(
    policy: bnn_mod.BnnModel,
    gp: gp_mod.GpModel,
    inputs_bnn: np.ndarray,
    inputs_gp: np.ndarray,
    beta: float,
    n_mc: int = 30,
    mc_seed: int = 0,
) -> np.ndarray:
    """Optimistic combined QoE estimate mu_s + mu_G + sqrt(beta) * sigma."""
    q_mean = bnn_mod.bnn_mean_predict(policy, inputs_bnn)
    g_mean, g_std = gp_mod.gp_predict(gp, inputs_gp)
    if beta > 0.0:
        _, q_std = bnn_mod.bnn_posterior(policy, inputs_bnn, n_mc=n_mc, seed=mc_seed)
        sigma = np.sqrt(q_std**2 + g_std**2)
        est = q_mean + g_mean + math.sqrt(beta) * sigma
    else:
        est = q_mean + g_mean
    return np.clip(est, *ACQ_CLAMP)


@dataclass
class _PoolStats:
    """Per-outer-iteration candidate pool with precomputed model terms.

    The BNN and GP are fixed between real queries, so their (expensive)
    posterior statistics are computed once per pool; inner rounds only
    re-score with the current multiplier.
    """

    actions: np.ndarray
    usage: np.ndarray
    q_optimistic: np.ndarray
    q_mean_sum: np.ndarray


def _build_pool(cfg: Stage3Config, policy, gp, beta: float, run_seed: int,
                iteration: int) -> _PoolStats:
    rng = np.random.default_rng(
        [derive_seed(run_seed, "stage3", iteration, "pool"), 0]
    )
    actions = rng.uniform(size=(cfg.candidates, len(slicesim.ACTION_BOUNDS)))
    inputs_bnn = _policy_inputs(cfg.traffic, cfg.latency_threshold_ms, actions,
                                cfg.latency_threshold_max_ms)
    inputs_gp = gp_input(cfg.traffic, actions)
    q_opt = acquisition_qoe(
        policy, gp, inputs_bnn, inputs_gp, beta, n_mc=cfg.n_mc,
        mc_seed=derive_seed(run_seed, "stage3", iteration, "mc"),
    )
    q_mean = np.clip(
        bnn_mod.bnn_mean_predict(policy, inputs_bnn)
        + gp_mod.gp_predict(gp, inputs_gp)[0],
        *ACQ_CLAMP,
    )
    return _PoolStats(actions=actions, usage=actions.mean(axis=1),
                      q_optimistic=q_opt, q_mean_sum=q_mean)


def offline_accelerate(
    state: OnlineState,
    cfg: Stage3Config,
    policy: bnn_mod.BnnModel,
    pool: _PoolStats,
    run_seed: int,
) -> OnlineState:
    """N serial augmented-simulator rounds updating the multiplier.

    Each round audits a fresh optimism-ranked candidate on the simulator and
    dual-updates the multiplier with its measured QoE. The pending real
    action is then chosen from every audited candidate so far: the
    lowest-usage one whose simulated QoE plus predicted residual meets the
    requirement (falling back to the highest such estimate if none do), so
    an optimistic-but-bad candidate can never be played for real.
    """
    if cfg.accel_rounds < 1:
        raise AtlasError("accel_rounds must be >= 1")
    sim_state = slicesim.NetworkState(traffic=cfg.traffic, distance_m=cfg.distance_m)
    picked: list[int] = []
    for inner in range(cfg.accel_rounds):
        score = pool.usage - state.lam * (pool.q_optimistic - cfg.qoe_requirement)
        score[picked] = np.inf  # each inner round audits a distinct candidate
        pick = int(np.argmin(score))
        picked.append(pick)
        action_norm = pool.actions[pick]
        action = slicesim.ConfigAction.from_normalized(action_norm)
        seed = derive_seed(run_seed, "stage3", state.iteration, inner, "accel-sim")
        trace = slicesim.simulate(cfg.params, action, sim_state, cfg.duration_s, seed)
        q_sim = metrics.qoe(trace, cfg.latency_threshold_ms)
        g_pred = float(gp_mod.gp_predict(state.gp, gp_input(cfg.traffic, action_norm))[0][0])
        state.lam = metrics.dual_update(state.lam, q_sim + g_pred,
                                        cfg.qoe_requirement, cfg.dual_step)
        state.audited.append((float(pool.usage[pick]), action_norm, q_sim))
    state.pending_action = _select_pending(state, cfg)
    return state


def _select_pending(state: OnlineState, cfg: Stage3Config) -> np.ndarray:
    """Best currently-believed-feasible action among all audited candidates."""
    usage = np.array([u for u, _, _ in state.audited])
    actions = np.array([a for _, a, _ in state.audited])
    q_sim = np.array([q for _, _, q in state.audited])
    g_pred, _ = gp_mod.gp_predict(state.gp, gp_input(cfg.traffic, actions))
    q_hat = q_sim + g_pred
    feasible = q_hat >= cfg.qoe_requirement
    if feasible.any():
        idx = int(np.flatnonzero(feasible)[np.argmin(usage[feasible])])
    else:
        idx = int(np.argmax(q_hat))
    return actions[idx]


def online_learn(
    cfg: Stage3Config,
    policy: bnn_mod.BnnModel,
    lambda_init: float,
    first_action: slicesim.ConfigAction,
    twin: slicesim.RealTwin,
    reference_usage: float,
    reference_qoe: float,
    run_seed: int,
) -> tuple[OnlineState, metrics.RunLedger]:
    """Online outer loop: accelerate offline, query the twin once
    per iteration, refit the residual GP, account regrets."""
    ledger = metrics.RunLedger(stage="stage3", reference_usage=reference_usage,
                               reference_qoe=reference_qoe)
    dim = len(slicesim.ACTION_BOUNDS) + 1
    state = OnlineState(
        lam=lambda_init,
        gp=gp_mod.empty_gp(dim, cfg.gp_lengthscale, cfg.gp_signal_var,
                           cfg.gp_noise_var),
    )
    sim_state = slicesim.NetworkState(traffic=cfg.traffic, distance_m=cfg.distance_m)

    for t in range(1, cfg.iterations + 1):
        state.iteration = t
        beta = crgpucb_beta(t, cfg.rho, cfg.beta_cap,
                            derive_seed(run_seed, "stage3", t, "beta"))
        pool = _build_pool(cfg, policy, state.gp, beta, run_seed, t)
        state = offline_accelerate(state, cfg, policy, pool, run_seed)

        # The very first online action is the offline incumbent.
        action_norm = (first_action.normalized() if t == 1
                       else state.pending_action)
        action = slicesim.ConfigAction.from_normalized(action_norm)

        real_seed = derive_seed(run_seed, "stage3", t, "real")
        real_trace = twin.query(action, sim_state, cfg.duration_s, real_seed)
        q_real = metrics.qoe(real_trace, cfg.latency_threshold_ms)

        sim_seed = derive_seed(run_seed, "stage3", t, "sim-label")
        sim_trace = slicesim.simulate(cfg.params, action, sim_state,
                                      cfg.duration_s, sim_seed)
        q_sim = metrics.qoe(sim_trace, cfg.latency_threshold_ms)
        state.audited.append(
            (metrics.resource_usage(action), np.asarray(action_norm, dtype=float),
             q_sim)
        )

        state.transitions_x.append(gp_input(cfg.traffic, action_norm)[0])
        state.transitions_g.append(q_real - q_sim)
        state.gp = gp_mod.gp_fit(
            np.array(state.transitions_x), np.array(state.transitions_g),
            cfg.gp_lengthscale, cfg.gp_signal_var, cfg.gp_noise_var,
        )

        usage = metrics.resource_usage(action)
        ledger.add(iter=t, kind="online", x_or_a=action_norm, usage=usage,
                   qoe=q_real, lam=state.lam, beta=beta, seed=real_seed)
        ledger.regret_update(usage, q_real)

    return state, ledger
