"""Forecast evaluation over trend groups and the history-window sweep."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import timedelta
from importlib import resources
from typing import Any, Optional, Sequence

from ..exploitation import EventSource, Forecaster, StaticEventSource, forecast_series, parse_window, window_label
from ..model import (
    EnrichedThreatInstance,
    Metadata,
    StaticAssessment,
    ThreatInstance,
    event_from_dict,
    parse_timestamp,
)
from ..static_analysis import assessment_from_vector
from .metrics import STABLE_BAND, dir_acc, directions, rmse
from .trends import ForecastCase, Trend

SYNTHETIC_VECTOR = "CVSS:3.1/AV:N/AC:H/PR:N/UI:N/S:U/C:H/I:H/A:H"


@dataclass(frozen=True)
class SweepCase:
    instance: EnrichedThreatInstance
    assessment: StaticAssessment
    source: EventSource
    cutoffs: tuple[Any, ...]
    reference: tuple[float, ...]


@dataclass(frozen=True)
class SweepRow:
    window: str
    years: float
    rmse: float
    points: int


def synthetic_instance(cve_id: str, label: str = "") -> EnrichedThreatInstance:
    inst = ThreatInstance(id=label or cve_id, parent_incident=label or cve_id, indicators=(cve_id,),
                          description=f"synthetic evaluation case {label or cve_id}", source="synthetic")
    return EnrichedThreatInstance(inst, Metadata(cve_id=cve_id))


def window_sweep(case: SweepCase, windows: Sequence[Any], forecaster: Optional[Forecaster] = None,
                 horizon_days: int = 30, max_workers: int = 4) -> list[SweepRow]:
    """RMSE of the forecast series against the reference, once per history window."""
    if not windows:
        raise ValueError("window_sweep needs at least one window")
    forecaster = forecaster or Forecaster()
    spans = [parse_window(w) for w in windows]

    def run(span: timedelta) -> SweepRow:
        preds = forecast_series(forecaster, case.instance, case.assessment, case.source, case.cutoffs, span,
                                horizon_days)
        return SweepRow(window_label(span), round(span.total_seconds() / 86400.0 / 365.25, 4), rmse(preds, case.reference), len(preds))

    with ThreadPoolExecutor(max_workers=max(1, min(max_workers, len(spans)))) as pool:
        return list(pool.map(run, spans))


def load_dilution_case() -> SweepCase:
    """Constructed fixture: recent history matches the reference, older history is noise."""
    raw = json.loads(resources.files("threatprio").joinpath("data/eval/dilution.json").read_text("utf-8"))
    return sweep_case_from_dict(raw)


def sweep_case_from_dict(raw: dict) -> SweepCase:
    cve = raw["cve_id"]
    events = [event_from_dict(e) for e in raw["events"]]
    return SweepCase(
        instance=synthetic_instance(cve, raw.get("label", "")),
        assessment=assessment_from_vector(raw.get("label") or cve, raw["vector"]),
        source=StaticEventSource({cve: events}),
        cutoffs=tuple(parse_timestamp(c) for c in raw["cutoffs"]),
        reference=tuple(float(x) for x in raw["reference"]),
    )


@dataclass(frozen=True)
class TrendScore:
    trend: Trend
    rmse: float
    dir_acc: float
    cases: int


def evaluate_forecasts(cases: Sequence[ForecastCase], forecaster: Optional[Forecaster] = None,
                       window: Any = "1y", horizon_days: int = 30, eps: float = STABLE_BAND) -> list[TrendScore]:
    """Per trend group: pooled RMSE and direction accuracy of forecasts at each reference point."""
    forecaster = forecaster or Forecaster()
    pooled: dict[Trend, tuple[list, list, list, list]] = {}
    for n, case in enumerate(cases):
        cve = f"CVE-2000-{10000 + n}"
        t = synthetic_instance(cve, case.case_id)
        assessment = assessment_from_vector(case.case_id, SYNTHETIC_VECTOR)
        source = StaticEventSource({cve: list(case.events)})
        cutoffs = [ts for ts, _ in case.series]
        ref = [v for _, v in case.series]
        preds = forecast_series(forecaster, t, assessment, source, cutoffs, window, horizon_days)
        bucket = pooled.setdefault(case.trend, ([], [], [], []))
        bucket[0].extend(preds)
        bucket[1].extend(ref)
        bucket[2].extend(directions(preds, eps))
        bucket[3].extend(directions(ref, eps))
    return [TrendScore(trend, rmse(b[0], b[1]), dir_acc(b[2], b[3]), sum(c.trend is trend for c in cases))
            for trend, b in sorted(pooled.items(), key=lambda kv: list(Trend).index(kv[0]))]
