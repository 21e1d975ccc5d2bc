"""Plot-data export: per-figure CSVs derived from run ledgers, with a
matching rendered figure written alongside each CSV."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from . import metrics, slicesim, stage1  # noqa: E402
from .errors import AtlasError  # noqa: E402


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _save_line_figure(path: Path, xs, series: dict, xlabel: str,
                      ylabel: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, ys in series.items():
        ax.plot(xs, ys, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def convergence_rows(ledger: metrics.RunLedger) -> list[list]:
    """(iteration, best KL so far) from stage-1 rows."""
    rows, best = [], float("inf")
    for row in ledger.rows:
        if row["kl"] is None:
            continue
        best = min(best, row["kl"])
        rows.append([row["iter"], best])
    return rows


def footprint_rows(ledger: metrics.RunLedger) -> list[list]:
    """(iteration, usage, qoe) scatter inputs per acquisition."""
    return [
        [row["iter"], row["usage"], row["qoe"]]
        for row in ledger.rows
        if row["usage"] is not None and row["qoe"] is not None
    ]


def regret_rows(summary: dict) -> list[list]:
    u_series = summary["usage_regret_series"]
    q_series = summary["qoe_regret_series"]
    return [
        [t, u / t, q / t]
        for t, (u, q) in enumerate(zip(u_series, q_series), start=1)
    ]


def emit_plot_data(run_dir, out_dir=None) -> Path:
    """Write convergence/footprint/regret CSVs (plus PNG renders) from a
    pipeline run directory; include pareto.csv when sweep points exist."""
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir else run_dir / "plots"
    out.mkdir(parents=True, exist_ok=True)

    s1_path = run_dir / "stage1" / "ledger.jsonl"
    if s1_path.exists():
        ledger = metrics.RunLedger.load(s1_path)
        rows = convergence_rows(ledger)
        if not rows:
            raise AtlasError(f"empty ledger: {s1_path}")
        _write_csv(out / "convergence.csv",
                   ["iteration", "best_kl_so_far"], rows)
        _save_line_figure(out / "convergence.png",
                          [r[0] for r in rows],
                          {"best KL so far": [r[1] for r in rows]},
                          "iteration", "KL divergence")

    s3_ledger_path = run_dir / "stage3" / "ledger.jsonl"
    if s3_ledger_path.exists():
        ledger = metrics.RunLedger.load(s3_ledger_path)
        rows = footprint_rows(ledger)
        if not rows:
            raise AtlasError(f"empty ledger: {s3_ledger_path}")
        _write_csv(out / "footprint.csv", ["iteration", "usage", "qoe"], rows)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.scatter([r[1] for r in rows], [r[2] for r in rows], s=12)
        ax.set_xlabel("resource usage")
        ax.set_ylabel("QoE")
        fig.tight_layout()
        fig.savefig(out / "footprint.png", dpi=120)
        plt.close(fig)

    s3_result_path = run_dir / "stage3" / "result.json"
    if s3_result_path.exists():
        with open(s3_result_path) as fh:
            summary = json.load(fh)
        rows = regret_rows(summary)
        if not rows:
            raise AtlasError(f"empty regret series: {s3_result_path}")
        _write_csv(out / "regret.csv",
                   ["iteration", "avg_usage_regret", "avg_qoe_regret"], rows)
        _save_line_figure(out / "regret.png", [r[0] for r in rows],
                          {"avg usage regret": [r[1] for r in rows],
                           "avg QoE regret": [r[2] for r in rows]},
                          "iteration", "average regret")

    pareto_path = run_dir / "pareto" / "points.json"
    if pareto_path.exists():
        with open(pareto_path) as fh:
            points = json.load(fh)
        rows = [[p["alpha"], p["distance"], p["kl"]] for p in points]
        _write_csv(out / "pareto.csv", ["alpha", "distance", "kl"], rows)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot([r[1] for r in rows], [r[2] for r in rows], "o-")
        for r in rows:
            ax.annotate(f"α={r[0]:g}", (r[1], r[2]), fontsize=8)
        ax.set_xlabel("parameter distance")
        ax.set_ylabel("KL divergence")
        fig.tight_layout()
        fig.savefig(out / "pareto.png", dpi=120)
        plt.close(fig)

    if not any(out.iterdir()):
        raise AtlasError(f"no ledgers found under {run_dir}")
    return out


def pareto_sweep(cfg: stage1.Stage1Config, reference: slicesim.LatencyTrace,
                 alphas, run_seed: int, out_path) -> list[dict]:
    """One stage-1 run per alpha; each yields a (distance, KL) trade-off
    point at that alpha's best weighted-discrepancy incumbent."""
    import dataclasses

    points = []
    for alpha in alphas:
        run_cfg = dataclasses.replace(cfg, alpha=float(alpha))
        result = stage1.search_parameters(run_cfg, reference, run_seed)
        dist = float(
            ((result.best_params.normalized() - cfg.x_hat.normalized()) ** 2)
            .sum() ** 0.5
        )
        points.append({"alpha": float(alpha), "distance": dist,
                       "kl": result.kl_at_best_weighted})
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w") as fh:
        json.dump(points, fh, indent=2)
        fh.write("\n")
    return points
