import numpy as np
import pytest

from atlas import metrics, slicesim
from atlas.errors import AtlasError


def trace_from(samples):
    samples = np.asarray(samples, dtype=float)
    zeros = np.zeros_like(samples)
    return slicesim.LatencyTrace(
        frame_ids=np.arange(len(samples), dtype=float),
        t_done_ms=np.cumsum(samples),
        samples=samples,
        components={name: zeros for name in slicesim.COMPONENT_NAMES},
        duration_s=1.0,
    )


def test_kl_identical_traces_zero():
    tr = trace_from(np.linspace(10, 900, 500))
    assert metrics.kl_divergence(tr, tr) <= 1e-9


def test_kl_gaussian_oracle():
    rng = np.random.default_rng(0)
    p = trace_from(np.abs(rng.normal(500, 50, 50_000)))
    q = trace_from(np.abs(rng.normal(600, 50, 50_000)))
    analytic = (600 - 500) ** 2 / (2 * 50**2)  # 2.0 nats
    estimate = metrics.kl_divergence(p, q)
    assert abs(estimate - analytic) / analytic < 0.15


def test_kl_nonnegative_and_overflow_binned():
    rng = np.random.default_rng(1)
    p = trace_from(rng.uniform(10, 3000, 2000))  # mass beyond the 2000ms cap
    q = trace_from(rng.uniform(10, 1000, 2000))
    assert metrics.kl_divergence(p, q) >= -1e-9


def test_kl_empty_trace_error():
    with pytest.raises(AtlasError):
        metrics.kl_divergence(trace_from([]), trace_from([100.0]))


def test_weighted_discrepancy():
    x_hat = slicesim.SimulationParams.default()
    assert metrics.weighted_discrepancy(0.7, x_hat, x_hat, 7.0) == 0.7
    x = slicesim.SimulationParams.from_normalized(
        np.clip(x_hat.normalized() + 0.1, 0, 1)
    )
    assert metrics.weighted_discrepancy(0.7, x, x_hat, 0.0) == 0.7
    dist = np.linalg.norm(x.normalized() - x_hat.normalized())
    expected = 0.7 + 7.0 * dist
    assert metrics.weighted_discrepancy(0.7, x, x_hat, 7.0) == pytest.approx(expected)
    # alpha=7 with distance 0.12 adds exactly 0.84
    assert 7.0 * 0.12 == pytest.approx(0.84)


def test_qoe():
    assert metrics.qoe(trace_from([150.0] * 10), 300.0) == 1.0
    assert metrics.qoe(trace_from([100.0, 400.0]), 300.0) == 0.5
    with pytest.raises(AtlasError):
        metrics.qoe(trace_from([]), 300.0)


def test_resource_usage():
    zero = slicesim.ConfigAction(0, 0, 0, 0, 0, 0)
    full = slicesim.ConfigAction(50, 50, 10, 10, 100, 1.0)
    assert metrics.resource_usage(zero) == 0.0
    assert metrics.resource_usage(full) == pytest.approx(1.0)
    reported = slicesim.ConfigAction(9, 3, 0, 0, 6.2, 0.8)
    expected = (9 / 50 + 3 / 50 + 6.2 / 100 + 0.8) / 6
    assert metrics.resource_usage(reported) == pytest.approx(expected)
    assert expected == pytest.approx(0.1837, abs=1e-4)


def test_resource_usage_strictly_increasing_each_coordinate():
    base = slicesim.ConfigAction(10, 10, 5, 5, 20, 0.5)
    u0 = metrics.resource_usage(base)
    for i in range(6):
        arr = base.as_array().copy()
        arr[i] += 0.5
        assert metrics.resource_usage(slicesim.ConfigAction.from_array(arr)) > u0


def test_lagrangian():
    assert metrics.lagrangian(0.3, 0.7, 0.0, 0.9) == 0.3
    assert metrics.lagrangian(0.3, 0.9, 5.0, 0.9) == pytest.approx(0.3)
    assert metrics.lagrangian(0.2, 0.8, 2.0, 0.9) == pytest.approx(0.4)


def test_dual_update():
    assert metrics.dual_update(0.5, 0.9, 0.9, 0.1) == 0.5
    assert metrics.dual_update(0.0, 0.5, 0.9, 0.1) == pytest.approx(0.04)
    assert metrics.dual_update(0.02, 1.0, 0.9, 0.1) == pytest.approx(0.01)
    assert metrics.dual_update(0.0, 1.0, 0.9, 0.1) == 0.0  # projection
    with pytest.raises(AtlasError):
        metrics.dual_update(0.1, 0.5, 0.9, 0.0)


def test_regret_updates_and_clamp():
    ledger = metrics.RunLedger(stage="stage3", reference_usage=0.2,
                               reference_qoe=0.9)
    ledger.regret_update(0.2, 0.9)
    assert ledger.usage_regret == 0.0 and ledger.qoe_regret == 0.0
    ledger.regret_update(0.3, 0.95)  # better QoE than reference: clamped
    assert ledger.usage_regret == pytest.approx(0.1)
    assert ledger.qoe_regret == 0.0
    ledger.regret_update(0.25, 0.8)
    assert ledger.qoe_regret == pytest.approx(0.1)
    assert ledger.usage_regret_series == sorted(ledger.usage_regret_series)
    assert ledger.qoe_regret_series == sorted(ledger.qoe_regret_series)
    avg_u, avg_q = ledger.average_regrets()
    assert avg_u == pytest.approx(ledger.usage_regret / 3)
    assert avg_q == pytest.approx(ledger.qoe_regret / 3)


def test_regret_requires_reference():
    with pytest.raises(AtlasError):
        metrics.RunLedger(stage="stage3").regret_update(0.1, 0.9)


def test_ledger_schema_roundtrip(tmp_path):
    ledger = metrics.RunLedger(stage="stage1")
    ledger.add(iter=0, kind="offline", x_or_a=[0.1, 0.2], kl=1.5, seed=7)
    ledger.add(iter=1, kind="online", usage=0.2, qoe=0.95, lam=0.3, beta=2.0,
               seed=8)
    path = tmp_path / "ledger.jsonl"
    ledger.save(path)
    loaded = metrics.RunLedger.load(path)
    assert loaded.rows == ledger.rows
    assert loaded.stage == "stage1"


def test_ledger_rejects_bad_rows():
    with pytest.raises(AtlasError):
        metrics.validate_row({"iter": 0})
    row = {k: None for k in metrics.LEDGER_KEYS}
    row.update(iter=0, stage="s", kind="sideways")
    with pytest.raises(AtlasError):
        metrics.validate_row(row)
