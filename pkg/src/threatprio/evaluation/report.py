"""CSV/JSON evaluation tables and matplotlib figures."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ..model import Metric  # noqa: E402
from .harness import StaticEval  # noqa: E402
from .sweep import SweepRow, TrendScore  # noqa: E402

FIELDS = ("stage", "metric", "condition", "value")


@dataclass(frozen=True)
class ReportRow:
    stage: str
    metric: str
    condition: str
    value: float


def static_rows(ev: StaticEval, condition: str) -> list[ReportRow]:
    rows = [ReportRow("static", f"accuracy_{m.value}", condition, ev.accuracy[m]) for m in Metric]
    rows += [
        ReportRow("static", "base_score_rmse", condition, ev.base_rmse),
        ReportRow("static", "vector_exact", condition, ev.vector_exact),
        ReportRow("static", "rating_accuracy", condition, ev.rating_accuracy),
    ]
    return rows


def forecast_rows(scores: Sequence[TrendScore]) -> list[ReportRow]:
    out = []
    for s in scores:
        out.append(ReportRow("forecast", "rmse_x1e-3", s.trend.value, s.rmse * 1000))
        out.append(ReportRow("forecast", "dir_acc", s.trend.value, s.dir_acc))
    return out


def sweep_rows(rows: Sequence[SweepRow]) -> list[ReportRow]:
    return [ReportRow("window_sweep", "rmse_x1e-3", r.window, r.rmse * 1000) for r in rows]


def _sorted(rows: Iterable[ReportRow]) -> list[ReportRow]:
    return sorted(rows, key=lambda r: (r.stage, r.metric, r.condition))


def write_tables(rows: Iterable[ReportRow], out_dir: Path) -> tuple[Path, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = _sorted(rows)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FIELDS)
    for r in rows:
        writer.writerow([r.stage, r.metric, r.condition, f"{r.value:.6f}"])
    csv_path = out_dir / "report.csv"
    csv_path.write_text(buf.getvalue(), encoding="utf-8")
    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps([{"stage": r.stage, "metric": r.metric, "condition": r.condition,
                                      "value": round(r.value, 6)} for r in rows], indent=2) + "\n",
                         encoding="utf-8")
    return csv_path, json_path


def write_static_table(ev: StaticEval, condition: str, out_dir: Path) -> Path:
    """Wide per-metric accuracy table, one row per condition."""
    path = out_dir / "static_accuracy.csv"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["condition", *[m.value for m in Metric], "base_score_rmse", "cases"])
    writer.writerow([condition, *[f"{ev.accuracy[m]:.4f}" for m in Metric], f"{ev.base_rmse:.4f}", ev.cases])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def _save(fig, path: Path) -> Path:
    # fixed metadata keeps the PNG bytes reproducible
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_static_accuracy(ev: StaticEval, condition: str, out_dir: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    names = [m.value for m in Metric]
    ax.bar(names, [ev.accuracy[m] for m in Metric], color="#4c72b0")
    ax.set_ylim(0, 1)
    ax.set_ylabel("accuracy")
    ax.set_title(f"Per-metric CVSS accuracy ({condition}, n={ev.cases})")
    fig.tight_layout()
    return _save(fig, out_dir / "static_accuracy.png")


def plot_window_sweep(rows: Sequence[SweepRow], out_dir: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ax.plot([r.years for r in rows], [r.rmse * 1000 for r in rows], marker="o", color="#dd8452")
    ax.set_xlabel("years of exploitation history")
    ax.set_ylabel("RMSE (x1e-3)")
    ax.set_title("Forecast error by history window")
    fig.tight_layout()
    return _save(fig, out_dir / "window_sweep.png")


def plot_forecast_trends(scores: Sequence[TrendScore], out_dir: Path) -> Path:
    fig, (left, right) = plt.subplots(1, 2, figsize=(7.2, 3.2))
    names = [s.trend.value for s in scores]
    left.bar(names, [s.rmse * 1000 for s in scores], color="#55a868")
    left.set_ylabel("RMSE (x1e-3)")
    right.bar(names, [s.dir_acc for s in scores], color="#8172b3")
    right.set_ylim(0, 1)
    right.set_ylabel("DirAcc")
    fig.suptitle("Forecast error by trend group")
    fig.tight_layout()
    return _save(fig, out_dir / "forecast_trends.png")
