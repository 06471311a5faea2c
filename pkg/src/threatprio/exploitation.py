"""Temporal narratives and exploitation-likelihood forecasts.

The gateway forecaster reads the narrative; when it is unavailable a fixed
logistic scorer stands in. The scorer starts from a prior (the EPSS
probability known at the cutoff, else a configured base rate) and shifts it
in log-odds by recency-weighted exploitation signals scaled by severity.
It is deliberately simple and is not a reimplementation of EPSS.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Any, Optional, Protocol, Sequence

from .errors import GatewayError, InvalidParams
from .gateway import Gateway
from .model import (
    EnrichedThreatInstance,
    EventKind,
    ExploitForecast,
    StaticAssessment,
    TemporalEvent,
    TemporalNarrative,
    digest,
    format_timestamp,
    parse_timestamp,
    to_jsonable,
)

log = logging.getLogger(__name__)

HORIZONS = (30, 90)
WINDOW_CHOICES_YEARS = (0.5, 1.0, 2.0, 3.0)
DEFAULT_WINDOW_YEARS = 1.0
DAYS_PER_YEAR = 365.25

_DURATION = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([ymwd])\s*$", re.IGNORECASE)
_UNIT_DAYS = {"y": DAYS_PER_YEAR, "m": DAYS_PER_YEAR / 12, "w": 7.0, "d": 1.0}


def parse_window(value: Any) -> timedelta:
    """``"1y"``, ``"0.5y"``, ``"6m"``, ``"180d"`` or a number of years."""
    if isinstance(value, timedelta):
        return value
    if isinstance(value, (int, float)):
        return timedelta(days=float(value) * DAYS_PER_YEAR)
    m = _DURATION.match(str(value))
    if not m:
        raise InvalidParams(f"unrecognised window {value!r}; use e.g. 1y, 6m, 180d")
    return timedelta(days=float(m.group(1)) * _UNIT_DAYS[m.group(2).lower()])


def window_label(window: timedelta) -> str:
    days = window.total_seconds() / 86400.0
    years = days / DAYS_PER_YEAR
    return f"{years:g}y" if abs(years * 2 - round(years * 2)) < 1e-6 else f"{days:g}d"


def history_window(as_of: Any, window: Any = DEFAULT_WINDOW_YEARS) -> tuple[datetime, datetime]:
    end = parse_timestamp(as_of)
    return end - parse_window(window), end


class EventSource(Protocol):
    def query_exploit_events(self, cve_id: str, window: tuple[Any, Any]) -> list[TemporalEvent]:
        ...


@dataclass
class StaticEventSource:
    """In-memory event source (evaluation fixtures, tests)."""

    events: dict[str, list[TemporalEvent]] = field(default_factory=dict)

    def query_exploit_events(self, cve_id: str, window: tuple[Any, Any]) -> list[TemporalEvent]:
        start, end = (parse_timestamp(w) for w in window)
        return sorted((e for e in self.events.get(cve_id, ()) if start <= e.at <= end), key=TemporalEvent.sort_key)


def build_narrative(t: EnrichedThreatInstance, window: tuple[Any, Any], source: EventSource) -> TemporalNarrative:
    start, end = (parse_timestamp(w) for w in window)
    if start > end:
        raise InvalidParams("window start after end")
    cve = t.metadata.cve_id or (t.instance.cve_ids[0] if t.instance.cve_ids else None)
    events = source.query_exploit_events(cve, (start, end)) if cve else []
    return TemporalNarrative.from_events([e for e in events if start <= e.at <= end], (start, end))


def format_narrative(narrative: TemporalNarrative) -> str:
    if not narrative.events:
        return "(no exploitation events in the window)"
    lines = []
    for n, ev in enumerate(narrative.events):
        gap = f"+{narrative.gaps[n - 1].days}d" if n else "start"
        lines.append(f"{format_timestamp(ev.at)} [{gap}] {ev.kind.value} ({ev.source}): {ev.detail}")
    return "\n".join(lines)


# -- fallback scorer ----------------------------------------------------------

@dataclass(frozen=True)
class FallbackWeights:
    base_rate: float = 0.02
    kev_listed: float = 1.5
    half_life_days: float = 90.0
    event: dict = field(default_factory=lambda: {
        EventKind.KEV_LISTED: 0.5,
        EventKind.POC_RELEASED: 1.0,
        EventKind.IN_WILD_OBSERVED: 1.2,
        EventKind.MALWARE_SEEN: 0.8,
        EventKind.ADVISORY_UPDATED: 0.1,
        EventKind.CVE_PUBLISHED: 0.0,
    })


def _logit(p: float) -> float:
    p = min(max(p, 1e-9), 1 - 1e-9)
    return math.log(p / (1 - p))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def horizon_scale(p30: float, horizon_days: int) -> float:
    """Probability over ``horizon_days`` assuming a constant 30-day hazard."""
    return 1.0 - (1.0 - p30) ** (horizon_days / 30.0)


@dataclass(frozen=True)
class FallbackResult:
    probability: float
    prior: float
    signal: float
    multiplier: float
    contributions: tuple[tuple[str, float], ...]


def fallback_score(t: EnrichedThreatInstance, base_score: float, narrative: TemporalNarrative,
                   horizon_days: int = 30, weights: FallbackWeights = FallbackWeights()) -> FallbackResult:
    meta = t.metadata
    prior = meta.epss.probability if meta.epss is not None else weights.base_rate
    reference = narrative.window[1]
    contributions: list[tuple[str, float]] = []
    kev = meta.kev_listed or any(e.kind is EventKind.KEV_LISTED for e in narrative.events)
    if kev:
        contributions.append(("kev-listed", weights.kev_listed))
    for ev in narrative.events:
        w = weights.event.get(ev.kind, 0.0)
        if w <= 0:
            continue
        age = max((reference - ev.at).total_seconds() / 86400.0, 0.0)
        contributions.append((f"{ev.kind.value}@{ev.at.date().isoformat()}", w * 0.5 ** (age / weights.half_life_days)))
    signal = sum(c for _, c in contributions)
    multiplier = 0.5 + min(max(base_score, 0.0), 10.0) / 10.0
    p30 = prior if signal == 0 else _sigmoid(_logit(prior) + multiplier * signal)
    p = p30 if horizon_days == 30 else horizon_scale(p30, horizon_days)
    return FallbackResult(min(max(p, 0.0), 1.0), prior, signal, multiplier, tuple(contributions))


# -- forecaster -----------------------------------------------------------------

def inputs_digest(t: EnrichedThreatInstance, assessment: StaticAssessment, narrative: TemporalNarrative) -> str:
    return digest({"instance": t, "vector": str(assessment.vector), "narrative": narrative})


class Forecaster:
    def __init__(self, gateway: Optional[Gateway] = None, weights: FallbackWeights = FallbackWeights()):
        self.gateway = gateway
        self.weights = weights

    def forecast(self, t: EnrichedThreatInstance, assessment: StaticAssessment, narrative: TemporalNarrative,
                 horizon_days: int = 30) -> ExploitForecast:
        if horizon_days not in HORIZONS:
            raise InvalidParams(f"horizon_days must be one of {HORIZONS}, got {horizon_days}")
        fingerprint = inputs_digest(t, assessment, narrative)
        if self.gateway is not None:
            try:
                return self._via_gateway(t, assessment, narrative, horizon_days, fingerprint)
            except GatewayError as exc:
                log.warning("%s: forecast gateway failed (%s); using fallback scorer", t.id, exc)
                return self._fallback(t, assessment, narrative, horizon_days, fingerprint,
                                      flagged=True, note=f"gateway failure: {exc.__class__.__name__}")
        return self._fallback(t, assessment, narrative, horizon_days, fingerprint, flagged=False)

    def _via_gateway(self, t, assessment, narrative, horizon_days, fingerprint) -> ExploitForecast:
        bindings = {
            "HORIZON_DAYS": str(horizon_days),
            "THREAT": to_jsonable(t),
            "VECTOR": str(assessment.vector),
            "BASE_SCORE": f"{assessment.base_score:.1f}",
            "NARRATIVE": format_narrative(narrative),
        }
        doc = self.gateway.complete("forecast", bindings).document
        raw = float(doc["probability"])
        p = min(max(raw, 0.0), 1.0)
        if p != raw:
            log.warning("%s: gateway probability %r clamped to %r", t.id, raw, p)
        rationale = (
            f"(i) exploitation signals: {doc['signals']}",
            f"(ii) exposure and mitigation frictions: {doc['exposure']}",
            f"(iii) adversary interest: {doc['adversary_interest']}",
        )
        return ExploitForecast(t.id, p, horizon_days, rationale, fingerprint, "gateway", False, raw)

    def _fallback(self, t, assessment, narrative, horizon_days, fingerprint, flagged, note="") -> ExploitForecast:
        res = fallback_score(t, assessment.base_score, narrative, horizon_days, self.weights)
        signals = ", ".join(f"{k} ({v:.3f})" for k, v in res.contributions) or "none in the window"
        prior_src = "EPSS at cutoff" if t.metadata.epss is not None else "configured base rate"
        rationale = (
            f"(i) exploitation signals: {signals}; recency-weighted total {res.signal:.3f}",
            f"(ii) exposure and mitigation frictions: vector {assessment.vector}, base score "
            f"{assessment.base_score:.1f}, severity multiplier {res.multiplier:.2f}",
            f"(iii) adversary interest: prior {res.prior:.4f} from {prior_src}",
        )
        if note:
            rationale += (note,)
        return ExploitForecast(t.id, res.probability, horizon_days, rationale, fingerprint, "fallback", flagged,
                               res.probability)


def forecast(t: EnrichedThreatInstance, assessment: StaticAssessment, narrative: TemporalNarrative,
             horizon_days: int = 30, gateway: Optional[Gateway] = None) -> ExploitForecast:
    return Forecaster(gateway).forecast(t, assessment, narrative, horizon_days)


def forecast_series(forecaster: Forecaster, t: EnrichedThreatInstance, assessment: StaticAssessment,
                    source: EventSource, cutoffs: Sequence[Any], window: Any = DEFAULT_WINDOW_YEARS,
                    horizon_days: int = 30) -> list[float]:
    """Forecast at several cutoffs (each with its own trailing window)."""
    out = []
    for cutoff in cutoffs:
        narrative = build_narrative(t, history_window(cutoff, window), source)
        out.append(forecaster.forecast(t, assessment, narrative, horizon_days).probability)
    return out
