"""Trend taxonomy for probability series: classifier and seeded generator."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from datetime import datetime, timedelta
from enum import Enum
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np

from ..errors import InvalidParams, TooShort
from ..model import EventKind, TemporalEvent, parse_timestamp

ABRUPT_FACTOR = 3.0
SLOPE_BAND = 0.10
MAX_NOISE = 0.05
_FLOOR = 1e-6

Series = list[tuple[datetime, float]]


class Trend(str, Enum):
    MONOTONIC = "monotonic"
    STABLE = "stable"
    ABRUPT = "abrupt"


def _step_ratio(a: float, b: float) -> float:
    lo, hi = sorted((max(a, _FLOOR), max(b, _FLOOR)))
    return hi / lo


def relative_slope(series: Sequence[tuple[Any, float]]) -> float:
    """|fitted slope x span| / mean, i.e. the fitted change relative to the level."""
    times = np.array([parse_timestamp(t).timestamp() / 86400.0 for t, _ in series])
    values = np.array([v for _, v in series], dtype=float)
    mean = float(values.mean())
    if mean <= 0:
        return 0.0
    slope = np.polyfit(times - times[0], values, 1)[0]
    return abs(float(slope) * float(times[-1] - times[0])) / mean


def classify_trend(series: Sequence[tuple[Any, float]], abrupt_factor: float = ABRUPT_FACTOR,
                   slope_band: float = SLOPE_BAND) -> Trend:
    if len(series) < 3:
        raise TooShort(f"need at least 3 points, got {len(series)}")
    values = [v for _, v in series]
    if any(_step_ratio(a, b) > abrupt_factor for a, b in zip(values, values[1:])):
        return Trend.ABRUPT
    if relative_slope(series) > slope_band:
        return Trend.MONOTONIC
    return Trend.STABLE


@dataclass(frozen=True)
class TrendParams:
    n: int = 12
    step_days: int = 30
    start: str = "2023-01-01T00:00:00Z"
    level: float = 0.05
    noise: float = 0.01
    change: float = 0.8          # monotonic: relative change across the series
    decreasing: bool = False
    jump_factor: float = 10.0    # abrupt: multiplier applied at jump_at
    jump_at: Optional[int] = None

    @classmethod
    def coerce(cls, params: Union["TrendParams", Mapping[str, Any], None]) -> "TrendParams":
        if params is None:
            return cls()
        if isinstance(params, cls):
            return params
        known = {f.name for f in fields(cls)}
        unknown = set(params) - known
        if unknown:
            raise InvalidParams(f"unknown series parameters: {', '.join(sorted(unknown))}")
        return cls(**params)


def _base_curve(trend: Trend, p: TrendParams) -> np.ndarray:
    idx = np.arange(p.n, dtype=float)
    if trend is Trend.STABLE:
        return np.full(p.n, p.level)
    if trend is Trend.MONOTONIC:
        end = p.level / (1 + p.change) if p.decreasing else p.level * (1 + p.change)
        return p.level + (end - p.level) * idx / (p.n - 1)
    jump_at = p.jump_at if p.jump_at is not None else p.n // 2
    return np.where(idx >= jump_at, p.level * p.jump_factor, p.level)


def _validate(trend: Trend, p: TrendParams) -> None:
    if p.n < 3:
        raise InvalidParams("n must be at least 3")
    if p.step_days < 1:
        raise InvalidParams("step_days must be positive")
    if not 0 < p.level < 1:
        raise InvalidParams("level must lie in (0, 1)")
    if not 0 <= p.noise <= MAX_NOISE:
        raise InvalidParams(f"noise must lie in [0, {MAX_NOISE}]")
    if trend is Trend.MONOTONIC:
        if not 0.3 <= p.change <= 5:
            raise InvalidParams("change must lie in [0.3, 5] for a monotonic series")
        base = _base_curve(trend, p)
        worst = max(_step_ratio(a, b) for a, b in zip(base, base[1:]))
        if worst * ((1 + p.noise) / (1 - p.noise)) > ABRUPT_FACTOR:
            raise InvalidParams("monotonic change too steep for the series length; it would read as abrupt")
    if trend is Trend.ABRUPT:
        if 1 / (ABRUPT_FACTOR + 1) < p.jump_factor < ABRUPT_FACTOR + 1:
            raise InvalidParams(f"jump_factor must be >= {ABRUPT_FACTOR + 1:g} or <= 1/{ABRUPT_FACTOR + 1:g}")
        jump_at = p.jump_at if p.jump_at is not None else p.n // 2
        if not 1 <= jump_at <= p.n - 1:
            raise InvalidParams("jump_at must fall inside the series")
    if float(_base_curve(trend, p).max()) * (1 + p.noise) > 1:
        raise InvalidParams("parameters push probabilities above 1")


def generate_series(trend: Union[Trend, str], params: Union[TrendParams, Mapping[str, Any], None] = None,
                    seed: int = 0) -> Series:
    """Seeded synthetic probability series of the requested trend.

    Noise is multiplicative and detrended before scaling, so it never moves
    the fitted slope and never exceeds ``params.noise`` relative.
    """
    try:
        trend = Trend(trend)
    except ValueError as exc:
        raise InvalidParams(f"unknown trend {trend!r}") from exc
    p = TrendParams.coerce(params)
    _validate(trend, p)
    rng = np.random.default_rng(seed)
    base = _base_curve(trend, p)
    idx = np.arange(p.n, dtype=float)
    eps = rng.uniform(-1.0, 1.0, p.n)
    eps = eps - np.polyval(np.polyfit(idx, eps, 1), idx)
    peak = float(np.abs(eps).max())
    eps = eps / peak * p.noise if peak > 0 and p.noise > 0 else np.zeros(p.n)
    values = np.clip(base * (1 + eps), _FLOOR, 1.0)
    start = parse_timestamp(p.start)
    return [(start + timedelta(days=i * p.step_days), float(v)) for i, v in enumerate(values)]


@dataclass(frozen=True)
class ForecastCase:
    case_id: str
    trend: Trend
    series: Series
    events: tuple[TemporalEvent, ...]
    base_score: float = 7.5


def _events_for(trend: Trend, p: TrendParams, series: Series, rng: np.random.Generator) -> list[TemporalEvent]:
    start = series[0][0]
    out = [TemporalEvent(start - timedelta(days=400), EventKind.CVE_PUBLISHED, "published", "nvd")]
    if trend is Trend.MONOTONIC:
        # activity thickens (or thins) along with the reference
        for i, (t, _) in enumerate(series[1:], start=1):
            share = i / (p.n - 1)
            share = 1 - share if p.decreasing else share
            if rng.random() < share:
                out.append(TemporalEvent(t - timedelta(days=int(rng.integers(1, p.step_days))),
                                         EventKind.POC_RELEASED, "exploit code posted", "exploit-db"))
    elif trend is Trend.ABRUPT:
        jump_at = p.jump_at if p.jump_at is not None else p.n // 2
        t = series[jump_at][0]
        out.append(TemporalEvent(t - timedelta(days=3), EventKind.IN_WILD_OBSERVED, "exploitation reported", "advisory"))
        out.append(TemporalEvent(t - timedelta(days=1), EventKind.KEV_LISTED, "added to catalog", "kev"))
    return out


def synthetic_forecast_cases(per_trend: int = 10, seed: int = 0) -> list[ForecastCase]:
    """Reference series of every trend with exploitation events consistent with them."""
    rng = np.random.default_rng(seed)
    cases = []
    for trend in Trend:
        for k in range(per_trend):
            draw = int(rng.integers(0, 2**31 - 1))
            local = np.random.default_rng(draw)
            p = TrendParams(level=float(local.uniform(0.02, 0.08)), noise=0.01,
                            decreasing=trend is Trend.MONOTONIC and bool(k % 2))
            if trend is Trend.ABRUPT:
                p = replace(p, jump_factor=float(local.uniform(5, 10)))
            series = generate_series(trend, p, draw)
            cases.append(ForecastCase(f"SYN-{trend.value}-{k:03d}", trend, series,
                                      tuple(_events_for(trend, p, series, local))))
    return cases
