"""Scalar objectives: KL discrepancy, QoE, resource usage, Lagrangian, regrets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import AtlasError, ConfigError
from .slicesim import ConfigAction, LatencyTrace, SimulationParams

KL_BINS = 60
KL_SMOOTHING = 1e-6
DEFAULT_LATENCY_CAP_MS = 2000.0

LEDGER_KEYS = (
    "iter", "stage", "kind", "x_or_a", "usage", "qoe", "kl", "lambda", "beta", "seed",
)


def _histogram(samples: np.ndarray, cap_ms: float) -> np.ndarray:
    edges = np.linspace(0.0, cap_ms, KL_BINS + 1)
    clipped = np.minimum(samples, cap_ms)  # overflow mass into the last bin
    counts, _ = np.histogram(clipped, bins=edges)
    smoothed = counts.astype(float) + KL_SMOOTHING
    return smoothed / smoothed.sum()


def kl_divergence(
    real: LatencyTrace, sim: LatencyTrace, latency_cap_ms: float = DEFAULT_LATENCY_CAP_MS
) -> float:
    """Smoothed shared-bin histogram estimate of KL(real || sim)."""
    if real.frames_completed == 0 or sim.frames_completed == 0:
        raise AtlasError("kl_divergence requires non-empty traces")
    p = _histogram(real.samples, latency_cap_ms)
    q = _histogram(sim.samples, latency_cap_ms)
    return float(np.sum(p * np.log(p / q)))


def weighted_discrepancy(
    kl: float, x: SimulationParams, x_hat: SimulationParams, alpha: float
) -> float:
    """KL plus the weighted l2 distance between normalized parameter vectors."""
    dist = float(np.linalg.norm(x.normalized() - x_hat.normalized()))
    return kl + alpha * dist


def qoe(trace: LatencyTrace, threshold_ms: float) -> float:
    """Fraction of frames with end-to-end latency at or below the threshold."""
    if trace.frames_completed == 0:
        raise AtlasError("qoe requires a non-empty trace")
    return float(np.mean(trace.samples <= threshold_ms))


def resource_usage(action: ConfigAction) -> float:
    """Mean of the six normalized action coordinates, so usage is in [0, 1]."""
    action.validate()
    return float(np.mean(action.normalized()))


def lagrangian(usage: float, qoe_est: float, lam: float, e_req: float) -> float:
    return usage - lam * (qoe_est - e_req)


def dual_update(lam: float, qoe_measured: float, e_req: float, eps: float) -> float:
    """Projected sub-gradient step on the multiplier; never negative."""
    if eps <= 0:
        raise AtlasError(f"dual step size must be > 0, got {eps}")
    return max(lam - eps * (qoe_measured - e_req), 0.0)


def validate_row(row: dict) -> None:
    if set(row) != set(LEDGER_KEYS):
        missing = set(LEDGER_KEYS) - set(row)
        extra = set(row) - set(LEDGER_KEYS)
        raise AtlasError(f"bad ledger row; missing={sorted(missing)} extra={sorted(extra)}")
    if row["kind"] not in ("offline", "online"):
        raise AtlasError(f"bad ledger kind {row['kind']!r}")
    if row["x_or_a"] is not None and not isinstance(row["x_or_a"], (list, tuple)):
        raise AtlasError("x_or_a must be a list or null")


@dataclass
class RunLedger:
    """Per-iteration records plus cumulative usage/QoE regrets.

    The reference optimum (usage and QoE of the brute-force grid optimum)
    must be set before regret updates.
    """

    stage: str
    reference_usage: float | None = None
    reference_qoe: float | None = None
    rows: list = field(default_factory=list)
    usage_regret: float = 0.0
    qoe_regret: float = 0.0
    usage_regret_series: list = field(default_factory=list)
    qoe_regret_series: list = field(default_factory=list)

    def add(self, *, iter, kind, x_or_a=None, usage=None, qoe=None, kl=None,
            lam=None, beta=None, seed=None) -> dict:
        row = {
            "iter": int(iter),
            "stage": self.stage,
            "kind": kind,
            "x_or_a": None if x_or_a is None else [float(v) for v in x_or_a],
            "usage": None if usage is None else float(usage),
            "qoe": None if qoe is None else float(qoe),
            "kl": None if kl is None else float(kl),
            "lambda": None if lam is None else float(lam),
            "beta": None if beta is None else float(beta),
            "seed": None if seed is None else int(seed),
        }
        validate_row(row)
        self.rows.append(row)
        return row

    def regret_update(self, usage: float, qoe_value: float) -> None:
        """Accumulate cumulative regrets against the reference optimum."""
        if self.reference_usage is None or self.reference_qoe is None:
            raise AtlasError("regret_update requires the reference optimum")
        self.usage_regret += usage - self.reference_usage
        self.qoe_regret += max(self.reference_qoe - qoe_value, 0.0)
        self.usage_regret_series.append(self.usage_regret)
        self.qoe_regret_series.append(self.qoe_regret)

    def average_regrets(self) -> tuple[float, float]:
        n = len(self.usage_regret_series)
        if n == 0:
            raise AtlasError("no regret records")
        return self.usage_regret / n, self.qoe_regret / n

    def save(self, path) -> None:
        with open(path, "w") as fh:
            for row in self.rows:
                validate_row(row)
                fh.write(json.dumps(row) + "\n")

    @classmethod
    def load(cls, path, stage: str = "") -> "RunLedger":
        ledger = cls(stage=stage)
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                validate_row(row)
                ledger.rows.append(row)
        if ledger.rows and not stage:
            ledger.stage = ledger.rows[0]["stage"]
        return ledger
