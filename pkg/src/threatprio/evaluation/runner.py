"""End-to-end evaluation run behind ``threatprio eval``.

Writes, under ``<output_dir>/eval``:

* ``report.csv`` / ``report.json``: long-form (stage, metric, condition, value) rows
* ``static_accuracy.csv``: per-metric CVSS accuracy
* ``static_accuracy.png``, ``forecast_trends.png``, ``window_sweep.png``
* ``run/``: the pipeline outputs the triage and plan metrics were computed from
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any

from ..errors import ConfigError
from ..model import plan_from_dict
from ..pipeline import Config, Pipeline, build_gateway
from .harness import evaluate_plan, evaluate_static, evaluate_triage, load_nvd_cases
from .report import (
    ReportRow,
    forecast_rows,
    plot_forecast_trends,
    plot_static_accuracy,
    plot_window_sweep,
    static_rows,
    sweep_rows,
    write_static_table,
    write_tables,
)
from .sweep import evaluate_forecasts, load_dilution_case, sweep_case_from_dict, window_sweep
from .trends import synthetic_forecast_cases

log = logging.getLogger(__name__)

DEFAULT_WINDOWS = ("0.5y", "1y", "2y", "3y")
STATIC_CONDITION = "lexicon"


def _optional_path(cfg: Config, key: str) -> Path | None:
    value = cfg.evaluation.get(key)
    if not value:
        return None
    p = Path(str(value))
    return p if p.is_absolute() else cfg.base_dir / p


def _load_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def run_evaluation(cfg: Config) -> dict[str, Any]:
    ev_cfg = cfg.evaluation
    out = cfg.output_dir / "eval"
    out.mkdir(parents=True, exist_ok=True)
    rows: list[ReportRow] = []

    # static analysis: description-only CVSS assignment against published vectors
    static = evaluate_static(load_nvd_cases(_optional_path(cfg, "nvd_cases")))
    rows += static_rows(static, STATIC_CONDITION)
    write_static_table(static, STATIC_CONDITION, out)
    figures = [plot_static_accuracy(static, STATIC_CONDITION, out)]

    # forecasting on synthetic stable / monotonic / abrupt series
    cases = synthetic_forecast_cases(int(ev_cfg.get("per_trend", 10)), cfg.seed)
    trend_scores = evaluate_forecasts(cases, window=cfg.window, horizon_days=cfg.horizon)
    rows += forecast_rows(trend_scores)
    figures.append(plot_forecast_trends(trend_scores, out))

    # history-window sweep
    dilution = _optional_path(cfg, "sweep_case")
    case = sweep_case_from_dict(_load_json(dilution)) if dilution else load_dilution_case()
    sweep = window_sweep(case, ev_cfg.get("windows") or DEFAULT_WINDOWS, horizon_days=cfg.horizon,
                         max_workers=cfg.max_workers)
    rows += sweep_rows(sweep)
    figures.append(plot_window_sweep(sweep, out))

    summary: dict[str, Any] = {
        "out": str(out),
        "static": {"cases": static.cases, "base_score_rmse": round(static.base_rmse, 4)},
        "forecast": {s.trend.value: {"rmse": round(s.rmse, 6), "dir_acc": round(s.dir_acc, 4)} for s in trend_scores},
        "window_sweep": {r.window: round(r.rmse, 6) for r in sweep},
    }

    # triage and plan against the labeled demo incidents, when gold labels are configured
    gold_path = _optional_path(cfg, "gold")
    if gold_path is not None:
        gold = _load_json(gold_path)
        pipeline = Pipeline(cfg, build_gateway(cfg), out_dir=out / "run")
        pipeline.run()
        triage = evaluate_triage(pipeline.instances(), gold["triage"])
        rows += [ReportRow("triage", k, cfg.backend, v) for k, v in triage.items()]
        plan = plan_from_dict(_load_json(pipeline.out / "reports" / "plan_details.json"))
        ref = gold["plan"]
        plan_scores = evaluate_plan(plan, ref["reference_order"], ref["relevance"], ref.get("actions"),
                                    k=int(ev_cfg.get("k", 5)))
        rows += [ReportRow("plan", k, cfg.backend, v) for k, v in plan_scores.items()]
        summary["triage"] = {k: round(v, 4) for k, v in triage.items()}
        summary["plan"] = {k: round(v, 4) for k, v in plan_scores.items()}

    csv_path, json_path = write_tables(rows, out)
    summary["files"] = sorted(p.name for p in (csv_path, json_path, out / "static_accuracy.csv", *figures))
    log.info("evaluation written to %s", out)
    return summary
