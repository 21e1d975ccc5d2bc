"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The heavy criteria run the real stage drivers at their stated scale
(T=300/P=8 searches, 400-round offline training, 100 online iterations,
4096-point grid oracles) with desk-scale candidate pools.
"""

import math
import statistics

import numpy as np
import pytest
import torch

from atlas import (baselines, bnn, gp, metrics, oracle, pipeline, slicesim,
                   stage1, stage2, stage3)

SEEDS = (100, 101, 102, 103, 104)
STATE1 = slicesim.NetworkState(traffic=1, distance_m=1.0)
E_REQ = 0.9
Y_MS = 300.0
DURATION = 60.0


def report(num: int, name: str, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {num} ({name}): {'PASS' if ok else 'FAIL'} — {detail}"
    print(line, flush=True)
    assert ok, f"criterion {num} failed: {detail}"


# ---------------------------------------------------------------- criterion 1

def _stage1_run(seed: int, parallel: int, iterations: int, warmup=None,
                epochs_per_round: int = 8):
    cfg = stage1.Stage1Config(iterations=iterations, parallel=parallel,
                              candidates=2000, warmup=warmup,
                              duration_s=DURATION,
                              epochs_per_round=epochs_per_round)
    twin = slicesim.RealTwin()
    ref = twin.query(cfg.reference_action, STATE1, DURATION, seed * 7 + 1)
    base = slicesim.simulate(cfg.x_hat, cfg.reference_action, STATE1,
                             DURATION, seed * 7 + 2)
    d0 = metrics.kl_divergence(ref, base)
    result = stage1.search_parameters(cfg, ref, run_seed=seed)
    return d0, result


def test_criterion_1_stage1_discrepancy_reduction():
    ratios = []
    for seed in SEEDS:
        d0, result = _stage1_run(seed, parallel=8, iterations=300)
        assert d0 > 0
        ratios.append(result.best_kl / d0)
    median = statistics.median(ratios)
    report(1, "stage-1 discrepancy reduction", median <= 0.5,
           f"median best-KL/D0 over {len(SEEDS)} seeds = {median:.4f} "
           f"(threshold 0.50)")


# ---------------------------------------------------------------- criterion 2

def test_criterion_2_parallel_query_benefit():
    # Equal total budget of 64 simulator queries per run — small enough that
    # the search is still converging (at larger budgets both variants hit the
    # KL estimation noise floor and the comparison stops discriminating).
    # Training compute is equalized per query: the serial run trains 1 epoch
    # per round where the batch run trains 8 epochs per 8-query round.
    p8, p1 = [], []
    for seed in SEEDS:
        _, r8 = _stage1_run(seed, parallel=8, iterations=22, warmup=16)
        _, r1 = _stage1_run(seed, parallel=1, iterations=64, warmup=16,
                            epochs_per_round=1)
        assert len(r8.ledger.rows) == len(r1.ledger.rows) == 64
        p8.append(r8.best_kl)
        p1.append(r1.best_kl)
    med8, med1 = statistics.median(p8), statistics.median(p1)
    report(2, "parallel-query benefit", med8 < med1,
           f"median best KL over {len(SEEDS)} seeds: P=8 {med8:.4f} vs "
           f"P=1 {med1:.4f} at an equal 64-query budget")


# ---------------------------------------------------------------- criterion 3

@pytest.fixture(scope="module")
def augmented_params():
    # Perfect-calibration stand-in: simulator parameters set to the twin's.
    return slicesim.SimulationParams.from_array(
        np.array(slicesim.DEFAULT_TWIN_PARAMS)
    )


@pytest.fixture(scope="module")
def stage2_result(augmented_params):
    cfg = stage2.Stage2Config(params=augmented_params, iterations=400,
                              parallel=8, candidates=10_000, warmup=40,
                              traffic_levels=(1,), duration_s=DURATION)
    return cfg, stage2.offline_train(cfg, run_seed=200)


@pytest.fixture(scope="module")
def sim_oracle(augmented_params):
    env = baselines.SimEnv(params=augmented_params)
    return oracle.run_oracle(env, traffic=1, qoe_requirement=E_REQ,
                             latency_threshold_ms=Y_MS, duration_s=DURATION,
                             run_seed=201)


def test_criterion_3_stage2_near_optimality(stage2_result, sim_oracle,
                                            augmented_params):
    cfg, result = stage2_result
    inc = result.incumbents[1]
    # Re-measure the incumbent's QoE on fresh seeds (winner's-curse control).
    fresh = []
    for k in range(3):
        trace = slicesim.simulate(augmented_params, inc.action, STATE1,
                                  DURATION, 9000 + k)
        fresh.append(metrics.qoe(trace, Y_MS))
    qoe_med = statistics.median(fresh)
    usage_ok = inc.usage <= 1.15 * sim_oracle["usage"]
    qoe_ok = qoe_med >= 0.88
    report(3, "stage-2 near-optimality", usage_ok and qoe_ok,
           f"incumbent usage {inc.usage:.4f} vs grid oracle "
           f"{sim_oracle['usage']:.4f} (allowed ≤ "
           f"{1.15 * sim_oracle['usage']:.4f}); re-measured QoE {qoe_med:.3f} "
           f"(required ≥ 0.88)")


# ---------------------------------------------------------------- criterion 4

@pytest.fixture(scope="module")
def twin_oracle():
    twin = slicesim.RealTwin()
    return oracle.run_oracle(twin, traffic=1, qoe_requirement=E_REQ,
                             latency_threshold_ms=Y_MS, duration_s=DURATION,
                             run_seed=202)


@pytest.fixture(scope="module")
def online_runs(stage2_result, augmented_params, twin_oracle):
    _, s2 = stage2_result
    cfg = stage3.Stage3Config(params=augmented_params, iterations=100,
                              candidates=1000, duration_s=DURATION)
    twin = slicesim.RealTwin()
    runs = []
    for seed in SEEDS:
        state, ledger = stage3.online_learn(
            cfg, s2.policy, s2.lambda_final, s2.best_action, twin,
            reference_usage=twin_oracle["usage"],
            reference_qoe=twin_oracle["qoe"], run_seed=seed,
        )
        runs.append((state, ledger))
    return runs


def test_criterion_4_stage3_regret_dominance(online_runs, twin_oracle):
    ours_u, ours_q = [], []
    for _, ledger in online_runs:
        u, q = ledger.average_regrets()
        ours_u.append(u)
        ours_q.append(q)
    base_u, base_q = [], []
    cfg = baselines.BaselineConfig(iterations=100, candidates=2000,
                                   duration_s=DURATION)
    twin = slicesim.RealTwin()
    for seed in SEEDS:
        ledger = baselines.run_gp_ei(twin, cfg, seed,
                                     twin_oracle["usage"], twin_oracle["qoe"])
        u, q = ledger.average_regrets()
        base_u.append(u)
        base_q.append(q)
    mu_ours, mq_ours = statistics.median(ours_u), statistics.median(ours_q)
    mu_base, mq_base = statistics.median(base_u), statistics.median(base_q)
    ok = mu_ours <= 0.5 * mu_base and mq_ours <= 0.5 * mq_base
    report(4, "stage-3 regret dominance", ok,
           f"median avg regrets over {len(SEEDS)} seeds — usage: "
           f"{mu_ours:.4f} vs GP-EI {mu_base:.4f}; QoE: {mq_ours:.4f} vs "
           f"GP-EI {mq_base:.4f} (both must be ≤ 50% of baseline)")


# ---------------------------------------------------------------- criterion 5

def test_criterion_5_residual_learning_sanity(stage2_result):
    _, s2 = stage2_result
    params = slicesim.SimulationParams.default()
    cfg = stage3.Stage3Config(params=params, iterations=100, candidates=1000,
                              duration_s=DURATION)
    twin = slicesim.RealTwin(params=params, sigma_res=0.0)
    state, _ = stage3.online_learn(cfg, s2.policy, s2.lambda_final,
                                   s2.best_action, twin, reference_usage=0.0,
                                   reference_qoe=1.0, run_seed=300)
    tail = np.abs(state.transitions_g[49:])
    mean_abs = float(np.mean(tail))
    report(5, "residual-learning sanity", mean_abs < 0.05,
           f"mean |residual| over online iterations 50-100 = {mean_abs:.4f} "
           f"with no sim-to-real gap (threshold 0.05)")


# ---------------------------------------------------------------- criterion 6

def test_criterion_6_numerical_oracles():
    details = []

    # GP vs analytic 2-point posterior.
    ell, s2v, n2 = 0.3, 1.0, 1e-3
    X = np.array([[0.2], [0.7]])
    y = np.array([0.5, -0.3])
    yn = (y - y.mean()) / y.std()
    def k(a, b):
        return float(gp.matern52(np.array([abs(a - b)]), ell, s2v)[0])
    K = np.array([[k(0.2, 0.2) + n2, k(0.2, 0.7)],
                  [k(0.7, 0.2), k(0.7, 0.7) + n2]])
    ks = np.array([k(0.4, 0.2), k(0.4, 0.7)])
    exp_mean = ks @ np.linalg.solve(K, yn) * y.std() + y.mean()
    exp_std = math.sqrt(max(s2v - ks @ np.linalg.solve(K, ks), 0)) * y.std()
    mean, std = gp.gp_predict(gp.gp_fit(X, y, ell, s2v, n2), np.array([[0.4]]))
    gp_ok = abs(mean[0] - exp_mean) <= 1e-8 and abs(std[0] - exp_std) <= 1e-8
    details.append(f"GP 2-point err {abs(mean[0] - exp_mean):.2e}")

    # Matern-2.5 closed form at r = lengthscale.
    kernel_err = abs(
        float(gp.matern52(np.array([ell]), ell, 1.0)[0])
        - (1 + math.sqrt(5) + 5 / 3) * math.exp(-math.sqrt(5))
    )
    kernel_ok = kernel_err <= 1e-12
    details.append(f"kernel err {kernel_err:.1e}")

    # BNN loss gradients vs central finite differences on a 1x4x1 net.
    model = bnn.bnn_init(1, hidden=(4,), seed=1, dtype=torch.float64)
    x = torch.tensor([[0.2], [0.8]], dtype=torch.float64)
    yv = torch.tensor([0.3, -0.6], dtype=torch.float64)
    rng = np.random.default_rng(2)
    worst = 0.0
    for trial in range(5):
        with torch.no_grad():
            for layer in model.net:
                for p in (layer.w_mu, layer.w_rho, layer.b_mu, layer.b_rho):
                    p.copy_(torch.as_tensor(
                        rng.uniform(-0.5, 0.5, size=tuple(p.shape))
                    ))
        eps = bnn.sample_eps(model, torch.Generator().manual_seed(trial))
        params = [p for layer in model.net
                  for p in (layer.w_mu, layer.w_rho, layer.b_mu, layer.b_rho)]
        for p in params:
            p.grad = None
        bnn.elbo_loss(model, x, yv, eps, kl_scale=1.0).backward()
        h = 1e-6
        for p in params:
            flat, grad = p.data.view(-1), p.grad.view(-1)
            for idx in range(flat.numel()):
                orig = float(flat[idx])
                flat[idx] = orig + h
                up = bnn.elbo_loss(model, x, yv, eps, kl_scale=1.0).item()
                flat[idx] = orig - h
                down = bnn.elbo_loss(model, x, yv, eps, kl_scale=1.0).item()
                flat[idx] = orig
                fd = (up - down) / (2 * h)
                scale = max(abs(fd), abs(float(grad[idx])), 1e-8)
                worst = max(worst, abs(fd - float(grad[idx])) / scale)
    grad_ok = worst < 1e-4
    details.append(f"grad rel err {worst:.1e}")

    # KL estimator vs analytic Gaussian KL.
    rng = np.random.default_rng(3)
    def trace_of(samples):
        z = np.zeros_like(samples)
        return slicesim.LatencyTrace(
            frame_ids=np.arange(len(samples), dtype=float),
            t_done_ms=np.cumsum(samples), samples=samples,
            components={n: z for n in slicesim.COMPONENT_NAMES},
            duration_s=1.0,
        )
    p_tr = trace_of(np.abs(rng.normal(500, 50, 50_000)))
    q_tr = trace_of(np.abs(rng.normal(600, 50, 50_000)))
    kl_est = metrics.kl_divergence(p_tr, q_tr)
    kl_ok = abs(kl_est - 2.0) / 2.0 < 0.15
    details.append(f"KL est {kl_est:.3f} vs 2.0")

    # Gamma(kappa, rho) empirical mean.
    kappa = stage3.crgpucb_kappa(10, 0.1)
    draws = np.random.default_rng(4).gamma(shape=kappa, scale=0.1, size=100_000)
    gamma_err = abs(draws.mean() - kappa * 0.1) / (kappa * 0.1)
    gamma_ok = gamma_err < 0.02
    details.append(f"Gamma mean err {gamma_err:.4f}")

    ok = gp_ok and kernel_ok and grad_ok and kl_ok and gamma_ok
    report(6, "numerical oracles", ok, "; ".join(details))


# ---------------------------------------------------------------- criterion 7

def test_criterion_7_dual_update_law():
    rng = np.random.default_rng(5)
    violations = 0
    for _ in range(1000):
        lam = float(rng.uniform(0, 5))
        q = float(rng.uniform(0, 1))
        e = float(rng.uniform(0, 1))
        eps = float(rng.uniform(1e-3, 1.0))
        new = metrics.dual_update(lam, q, e, eps)
        if new < 0:
            violations += 1
        elif q < e and not new > lam:
            violations += 1
        elif q > e and lam > 0 and not new < lam:
            violations += 1
        elif q == e and new != lam:
            violations += 1
        elif new != max(lam - eps * (q - e), 0.0):
            violations += 1
    report(7, "dual-update law", violations == 0,
           f"{violations} violations in 1000 random (lambda, qoe, E, eps) "
           f"draws")


# ---------------------------------------------------------------- criterion 8

def test_criterion_8_pipeline_determinism(tmp_path):
    cfg_text = (
        "run.seed = 17\n"
        f"run.out_dir = {tmp_path / 'run'}\n"
        "twin.sigma_res = 0.05\n"
        "sim.duration_s = 8\n"
        "stage1.iterations = 6\nstage1.parallel = 2\n"
        "stage1.candidates = 200\nstage1.warmup = 3\n"
        "stage1.epochs_warmup = 20\nstage1.epochs_per_round = 2\n"
        "stage2.iterations = 6\nstage2.parallel = 2\n"
        "stage2.candidates = 200\nstage2.warmup = 3\n"
        "stage2.epochs_warmup = 20\nstage2.epochs_per_round = 2\n"
        "stage2.traffic_levels = 1\n"
        "stage3.iterations = 2\nstage3.accel_rounds = 2\n"
        "stage3.candidates = 200\nstage3.n_mc = 5\n"
        "oracle.fractions = 0.0, 0.45, 0.9\n"
    )
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text(cfg_text)
    run_dir = pipeline.run_pipeline(cfg_path)
    ledgers = ["stage1/ledger.jsonl", "stage2/ledger.jsonl",
               "stage3/ledger.jsonl"]
    first = {rel: (run_dir / rel).read_bytes() for rel in ledgers}
    pipeline.run_pipeline(cfg_path)
    same = all((run_dir / rel).read_bytes() == first[rel] for rel in ledgers)
    report(8, "pipeline determinism", same,
           "rerun with fixed seed reproduced every ledger byte-identically"
           if same else "ledger bytes differ between reruns")
