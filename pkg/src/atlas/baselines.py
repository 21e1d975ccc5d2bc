"""Comparison methods: direct GP Bayesian optimization (expected improvement
and UCB variants) against the live environment, and an offline-surrogate
filter that picks min-usage predicted-feasible actions.

All baselines share the env interface, seed discipline, ledger schema, and
regret reference used by the staged pipeline, so regrets are comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import bnn as bnn_mod
from . import gp as gp_mod
from . import metrics, slicesim
from .seeds import derive_seed
from .stage2 import _policy_inputs
from .stage3 import gp_input


@dataclass
class SimEnv:
    """Simulator posing as the environment, for offline baseline runs."""

    params: slicesim.SimulationParams

    def query(self, action, state, duration_s, seed):
        return slicesim.simulate(self.params, action, state, duration_s, seed)


@dataclass
class BaselineConfig:
    iterations: int = 100
    warmup: int = 5
    candidates: int = 10_000
    qoe_requirement: float = 0.9
    latency_threshold_ms: float = 300.0
    latency_threshold_max_ms: float = 1000.0
    dual_step: float = 0.1
    lambda_init: float = 1.0
    traffic: int = 1
    distance_m: float = 1.0
    duration_s: float = 60.0
    gp_lengthscale: float = gp_mod.DEFAULT_LENGTHSCALE
    gp_signal_var: float = gp_mod.DEFAULT_SIGNAL_VAR
    gp_noise_var: float = gp_mod.DEFAULT_NOISE_VAR


def expected_improvement(mu: np.ndarray, std: np.ndarray,
                         incumbent: float) -> np.ndarray:
    """EI for minimization; zero predictive std degrades to max(gap, 0)."""
    mu = np.asarray(mu, dtype=float)
    std = np.asarray(std, dtype=float)
    gap = incumbent - mu
    out = np.maximum(gap, 0.0)
    pos = std > 0.0
    z = gap[pos] / std[pos]
    out[pos] = gap[pos] * norm.cdf(z) + std[pos] * norm.pdf(z)
    return out


def ucb_beta(n: int) -> float:
    """Deterministic exploration schedule, non-decreasing in n."""
    return 2.0 * math.log(n * n * math.pi**2 / 6.0 / 0.1)


def _lagrangian_stats(gp, inputs, usage, lam, e_req):
    q_mu, q_std = gp_mod.gp_predict(gp, inputs)
    return usage - lam * (q_mu - e_req), lam * q_std


def _run_gp_method(env, cfg: BaselineConfig, run_seed: int, method: str,
                   reference_usage: float, reference_qoe: float,
                   ) -> metrics.RunLedger:
    ledger = metrics.RunLedger(stage=f"baseline-{method}",
                               reference_usage=reference_usage,
                               reference_qoe=reference_qoe)
    state = slicesim.NetworkState(traffic=cfg.traffic, distance_m=cfg.distance_m)
    dim = len(slicesim.ACTION_BOUNDS)
    lam = cfg.lambda_init
    xs: list[np.ndarray] = []
    usages: list[float] = []
    qoes: list[float] = []

    def observe(t, action_norm):
        nonlocal lam
        action = slicesim.ConfigAction.from_normalized(action_norm)
        seed = derive_seed(run_seed, method, t, "env")
        trace = env.query(action, state, cfg.duration_s, seed)
        q = metrics.qoe(trace, cfg.latency_threshold_ms)
        usage = metrics.resource_usage(action)
        lam = metrics.dual_update(lam, q, cfg.qoe_requirement, cfg.dual_step)
        xs.append(action_norm)
        usages.append(usage)
        qoes.append(q)
        ledger.add(iter=t, kind="online", x_or_a=action_norm, usage=usage,
                   qoe=q, lam=lam, seed=seed)
        ledger.regret_update(usage, q)

    warm_rng = np.random.default_rng(
        [derive_seed(run_seed, method, "warmup"), 0]
    )
    n_warm = min(cfg.warmup, cfg.iterations)
    for t in range(1, n_warm + 1):
        observe(t, warm_rng.uniform(size=dim))

    for t in range(n_warm + 1, cfg.iterations + 1):
        gp = gp_mod.gp_fit(
            gp_input(cfg.traffic, np.array(xs)), np.array(qoes),
            cfg.gp_lengthscale, cfg.gp_signal_var, cfg.gp_noise_var,
        )
        pool_rng = np.random.default_rng(
            [derive_seed(run_seed, method, t, "pool"), 0]
        )
        cands = pool_rng.uniform(size=(cfg.candidates, dim))
        cand_usage = cands.mean(axis=1)
        mu, std = _lagrangian_stats(gp, gp_input(cfg.traffic, cands),
                                    cand_usage, lam, cfg.qoe_requirement)
        if method == "gp-ei":
            observed = np.array(usages) - lam * (np.array(qoes)
                                                 - cfg.qoe_requirement)
            score = -expected_improvement(mu, std, float(observed.min()))
        else:
            score = mu - math.sqrt(ucb_beta(t)) * std
        observe(t, cands[np.argmin(score)])
    return ledger


def run_gp_ei(env, cfg: BaselineConfig, run_seed: int,
              reference_usage: float, reference_qoe: float) -> metrics.RunLedger:
    return _run_gp_method(env, cfg, run_seed, "gp-ei",
                          reference_usage, reference_qoe)


def run_gp_ucb(env, cfg: BaselineConfig, run_seed: int,
               reference_usage: float, reference_qoe: float) -> metrics.RunLedger:
    return _run_gp_method(env, cfg, run_seed, "gp-ucb",
                          reference_usage, reference_qoe)


def run_offline_surrogate_filter(
    env, cfg: BaselineConfig, policy: bnn_mod.BnnModel, run_seed: int,
    reference_usage: float, reference_qoe: float,
) -> metrics.RunLedger:
    """Each iteration: score a random pool with the offline surrogate plus a
    mean residual correction from observations, take the min-usage action
    predicted feasible (or the highest-predicted-QoE action if none is)."""
    ledger = metrics.RunLedger(stage="baseline-offline-filter",
                               reference_usage=reference_usage,
                               reference_qoe=reference_qoe)
    state = slicesim.NetworkState(traffic=cfg.traffic, distance_m=cfg.distance_m)
    dim = len(slicesim.ACTION_BOUNDS)
    residuals: list[float] = []
    for t in range(1, cfg.iterations + 1):
        rng = np.random.default_rng(
            [derive_seed(run_seed, "offline-filter", t, "pool"), 0]
        )
        cands = rng.uniform(size=(cfg.candidates, dim))
        inputs = _policy_inputs(cfg.traffic, cfg.latency_threshold_ms, cands,
                                cfg.latency_threshold_max_ms)
        if isinstance(policy, bnn_mod.BnnModel):
            q_pred = bnn_mod.bnn_mean_predict(policy, inputs)
        else:  # any vectorized predictor, e.g. an injected oracle
            q_pred = np.asarray(policy(inputs), dtype=float)
        if residuals:
            q_pred = q_pred + float(np.mean(residuals))
        usage = cands.mean(axis=1)
        feasible = q_pred >= cfg.qoe_requirement
        if feasible.any():
            pick = int(np.flatnonzero(feasible)[np.argmin(usage[feasible])])
        else:
            pick = int(np.argmax(q_pred))
        action = slicesim.ConfigAction.from_normalized(cands[pick])
        seed = derive_seed(run_seed, "offline-filter", t, "env")
        trace = env.query(action, state, cfg.duration_s, seed)
        q = metrics.qoe(trace, cfg.latency_threshold_ms)
        residuals.append(q - float(q_pred[pick]))
        ledger.add(iter=t, kind="online", x_or_a=cands[pick],
                   usage=float(usage[pick]), qoe=q, seed=seed)
        ledger.regret_update(float(usage[pick]), q)
    return ledger


def gp_minimize(fn, dim: int, iterations: int, run_seed: int,
                candidates: int = 2000, warmup: int = 5,
                lengthscale: float = 0.2,
                method: str = "gp-ei") -> tuple[np.ndarray, float]:
    """Generic GP minimizer over [0,1]^dim for synthetic checks."""
    rng = np.random.default_rng([derive_seed(run_seed, "gpmin"), 0])
    xs = list(rng.uniform(size=(min(warmup, iterations), dim)))
    ys = [float(fn(x)) for x in xs]
    for t in range(len(xs), iterations):
        gp = gp_mod.gp_fit(np.array(xs), np.array(ys), lengthscale, 1.0, 1e-6)
        cands = rng.uniform(size=(candidates, dim))
        mu, std = gp_mod.gp_predict(gp, cands)
        if method == "gp-ei":
            pick = np.argmax(expected_improvement(mu, std, min(ys)))
        else:
            pick = np.argmin(mu - math.sqrt(ucb_beta(t + 1)) * std)
        xs.append(cands[pick])
        ys.append(float(fn(cands[pick])))
    best = int(np.argmin(ys))
    return xs[best], ys[best]
