"""Shared domain types, the CVSS v3.1 base-vector text format, and validation.

Every record here is an immutable value: frozen dataclasses with tuple
collections, safe to hand between worker threads. JSON interchange uses the
field names below verbatim (snake_case); timestamps are UTC ISO 8601.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import re
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from enum import Enum
from typing import Any, Iterable, Mapping, NamedTuple, Optional

from .errors import ConfigError, DuplicateMetric, MalformedVector, MissingMetric

CVE_PATTERN = re.compile(r"^CVE-\d{4}-\d{4,}$")
CVE_SEARCH = re.compile(r"\bCVE-\d{4}-\d{4,}\b", re.IGNORECASE)
TECHNIQUE_PATTERN = re.compile(r"^T\d{4}(?:\.\d{3})?$")


# ---------------------------------------------------------------------------
# Time helpers
# ---------------------------------------------------------------------------

def parse_timestamp(value: Any) -> datetime:
    """Parse an ISO 8601 timestamp (or date) into an aware UTC datetime."""
    if isinstance(value, datetime):
        dt = value
    elif isinstance(value, date):
        dt = datetime(value.year, value.month, value.day)
    elif isinstance(value, str):
        text = value.strip()
        if text.endswith(("Z", "z")):
            text = text[:-1] + "+00:00"
        # "+0000" offsets (EPSS headers) are not accepted by fromisoformat on 3.10
        text = re.sub(r"([+-]\d{2})(\d{2})$", r"\1:\2", text)
        try:
            dt = datetime.fromisoformat(text)
        except ValueError as exc:
            raise ValueError(f"not an ISO 8601 timestamp: {value!r}") from exc
    else:
        raise ValueError(f"not an ISO 8601 timestamp: {value!r}")
    if dt.tzinfo is None:
        return dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_timestamp(dt: datetime) -> str:
    return parse_timestamp(dt).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_date(value: Any) -> date:
    if isinstance(value, datetime):
        return parse_timestamp(value).date()
    if isinstance(value, date):
        return value
    if isinstance(value, str):
        text = value.strip()
        if len(text) == 10:
            try:
                return date.fromisoformat(text)
            except ValueError as exc:
                raise ValueError(f"not an ISO 8601 date: {value!r}") from exc
        return parse_timestamp(text).date()
    raise ValueError(f"not an ISO 8601 date: {value!r}")


def _opt(fn, value):
    return None if value is None or value == "" else fn(value)


# ---------------------------------------------------------------------------
# CVSS vector
# ---------------------------------------------------------------------------

class Metric(str, Enum):
    AV = "AV"
    AC = "AC"
    PR = "PR"
    UI = "UI"
    S = "S"
    C = "C"
    I = "I"  # noqa: E741
    A = "A"

    @property
    def field_name(self) -> str:
        return _FIELD_NAMES[self]

    @property
    def domain(self) -> type[Enum]:
        return METRIC_DOMAINS[self]

    def coerce(self, value: Any) -> Enum:
        """Accept an enum member, its full name, or its one-letter abbreviation."""
        domain = self.domain
        if isinstance(value, domain):
            return value
        text = str(value).strip()
        for member in domain:
            if text.lower() == member.value.lower() or text.upper() == member.abbrev:
                return member
        raise ValueError(f"{text!r} is not a valid {self.value} value")


class _Abbrev:
    @property
    def abbrev(self) -> str:
        return self.value[0]


class AttackVector(_Abbrev, str, Enum):
    NETWORK = "Network"
    ADJACENT = "Adjacent"
    LOCAL = "Local"
    PHYSICAL = "Physical"


class AttackComplexity(_Abbrev, str, Enum):
    LOW = "Low"
    HIGH = "High"


class PrivilegesRequired(_Abbrev, str, Enum):
    NONE = "None"
    LOW = "Low"
    HIGH = "High"


class UserInteraction(_Abbrev, str, Enum):
    NONE = "None"
    REQUIRED = "Required"


class Scope(_Abbrev, str, Enum):
    UNCHANGED = "Unchanged"
    CHANGED = "Changed"


class Impact(_Abbrev, str, Enum):
    NONE = "None"
    LOW = "Low"
    HIGH = "High"


METRIC_DOMAINS: dict[Metric, type[Enum]] = {
    Metric.AV: AttackVector,
    Metric.AC: AttackComplexity,
    Metric.PR: PrivilegesRequired,
    Metric.UI: UserInteraction,
    Metric.S: Scope,
    Metric.C: Impact,
    Metric.I: Impact,
    Metric.A: Impact,
}

_FIELD_NAMES = {
    Metric.AV: "av", Metric.AC: "ac", Metric.PR: "pr", Metric.UI: "ui",
    Metric.S: "scope", Metric.C: "c", Metric.I: "i", Metric.A: "a",
}

METRIC_ORDER: tuple[Metric, ...] = tuple(Metric)


@dataclass(frozen=True)
class CvssVector:
    av: AttackVector
    ac: AttackComplexity
    pr: PrivilegesRequired
    ui: UserInteraction
    scope: Scope
    c: Impact
    i: Impact
    a: Impact

    def __post_init__(self):
        for metric in METRIC_ORDER:
            value = getattr(self, metric.field_name)
            object.__setattr__(self, metric.field_name, metric.coerce(value))

    def get(self, metric: Metric) -> Enum:
        return getattr(self, Metric(metric).field_name)

    def replace(self, metric: Metric, value: Any) -> "CvssVector":
        return dataclasses.replace(self, **{Metric(metric).field_name: value})

    @classmethod
    def from_mapping(cls, values: Mapping[Metric, Any]) -> "CvssVector":
        return cls(**{m.field_name: values[m] for m in METRIC_ORDER})

    def __str__(self) -> str:
        return serialize_cvss_vector(self)


def parse_cvss_vector(text: str) -> CvssVector:
    """Parse ``AV:N/AC:L/...`` into a :class:`CvssVector`.

    Tokens may come in any order. A leading ``CVSS:3.0`` or ``CVSS:3.1``
    version label is accepted and dropped.
    """
    if not isinstance(text, str) or not text.strip():
        raise MalformedVector("empty vector string")
    tokens = text.strip().split("/")
    if tokens[0].upper().startswith("CVSS:"):
        if tokens[0].upper() not in ("CVSS:3.0", "CVSS:3.1"):
            raise MalformedVector(f"unsupported CVSS version label {tokens[0]!r}")
        tokens = tokens[1:]
    seen: dict[Metric, Enum] = {}
    for token in tokens:
        key, sep, value = token.partition(":")
        if not sep or not key or not value:
            raise MalformedVector(f"bad token {token!r}")
        try:
            metric = Metric(key)
        except ValueError:
            raise MalformedVector(f"unknown metric key {key!r}") from None
        member = next((m for m in metric.domain if m.abbrev == value), None)
        if member is None:
            raise MalformedVector(f"{value!r} is not in the {key} domain")
        if metric in seen:
            raise DuplicateMetric(f"metric {key} given twice")
        seen[metric] = member
    missing = [m.value for m in METRIC_ORDER if m not in seen]
    if missing:
        raise MissingMetric("missing metrics: " + ", ".join(missing))
    return CvssVector.from_mapping(seen)


def serialize_cvss_vector(v: CvssVector) -> str:
    return "/".join(f"{m.value}:{v.get(m).abbrev}" for m in METRIC_ORDER)


# ---------------------------------------------------------------------------
# Incidents and threat instances
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RawIncident:
    id: str
    text: str
    source: str
    observed_at: datetime

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError(f"incident {self.id}: text must be non-empty")
        object.__setattr__(self, "observed_at", parse_timestamp(self.observed_at))


@dataclass(frozen=True)
class ThreatInstance:
    id: str
    parent_incident: str
    vendor: str = ""
    affected_components: tuple[str, ...] = ()
    campaign: Optional[str] = None
    impact: str = ""
    attack_patterns: tuple[str, ...] = ()
    indicators: tuple[str, ...] = ()
    # verbatim excerpt of the parent incident that describes this threat
    description: str = ""
    # provenance label inherited from the parent incident
    source: str = ""

    @property
    def cve_ids(self) -> tuple[str, ...]:
        return tuple(i.upper() for i in self.indicators if CVE_PATTERN.match(i.upper()))

    def text_fields(self) -> list[tuple[str, str]]:
        """(field path, text) pairs that evidence spans may be drawn from."""
        out = [("instance.description", self.description), ("instance.impact", self.impact)]
        out += [(f"instance.attack_patterns[{n}]", p) for n, p in enumerate(self.attack_patterns)]
        out += [(f"instance.affected_components[{n}]", c) for n, c in enumerate(self.affected_components)]
        if self.campaign:
            out.append(("instance.campaign", self.campaign))
        return [(k, v) for k, v in out if v]


class ExploitationStatus(str, Enum):
    CONFIRMED_IN_WILD = "confirmed-in-wild"
    POC_PUBLIC = "poc-public"
    NO_EVIDENCE = "no-evidence"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class AffectedSystem:
    vendor: str
    product: str
    version_range: str = ""


@dataclass(frozen=True)
class Disclosure:
    channel: Optional[str] = None
    type: Optional[str] = None
    first_reported: Optional[datetime] = None
    advisory_released: Optional[datetime] = None
    patch_released: Optional[datetime] = None
    last_updated: Optional[datetime] = None
    patch_available: Optional[bool] = None


@dataclass(frozen=True)
class EpssScore:
    probability: float
    percentile: float
    snapshot_date: date


@dataclass(frozen=True)
class SourcedText:
    """Authoritative free text attached during enrichment (NVD description, KEV notes, ...)."""

    source: str
    text: str
    reference: str = ""


@dataclass(frozen=True)
class Metadata:
    cve_id: Optional[str] = None
    attack_techniques: tuple[str, ...] = ()
    exploitation_status: ExploitationStatus = ExploitationStatus.UNKNOWN
    affected_systems: tuple[AffectedSystem, ...] = ()
    disclosure: Disclosure = field(default_factory=Disclosure)
    epss: Optional[EpssScore] = None
    kev_listed: bool = False
    kev_date_added: Optional[date] = None
    context_texts: tuple[SourcedText, ...] = ()


@dataclass(frozen=True)
class EnrichedThreatInstance:
    instance: ThreatInstance
    metadata: Metadata

    @property
    def id(self) -> str:
        return self.instance.id

    def text_fields(self) -> list[tuple[str, str, str]]:
        """(locator, source, text) triples across the instance and its metadata."""
        src = self.instance.source or "incident"
        out = [(loc, src, text) for loc, text in self.instance.text_fields()]
        for n, ctx in enumerate(self.metadata.context_texts):
            out.append((f"metadata.context_texts[{n}]", ctx.source, ctx.text))
        return out


# ---------------------------------------------------------------------------
# Static analysis
# ---------------------------------------------------------------------------

class Rating(str, Enum):
    NONE = "None"
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"
    CRITICAL = "Critical"


@dataclass(frozen=True)
class EvidenceSpan:
    span: str
    source: str
    locator: Optional[str] = None

    def __post_init__(self):
        if not self.span:
            raise ValueError("evidence span must be non-empty")


@dataclass(frozen=True)
class MetricDecision:
    metric: Metric
    value: Enum
    evidence: tuple[EvidenceSpan, ...] = ()
    rationale: str = ""
    confidence: float = 0.0
    defaulted: bool = False

    def __post_init__(self):
        metric = Metric(self.metric)
        object.__setattr__(self, "metric", metric)
        object.__setattr__(self, "value", metric.coerce(self.value))
        object.__setattr__(self, "evidence", tuple(self.evidence))
        if not self.evidence and not self.defaulted:
            raise ValueError(f"{metric.value}: decision without evidence must be flagged defaulted")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"{metric.value}: confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class StaticAssessment:
    instance_id: str
    vector: CvssVector
    base_score: float
    rating: Rating
    per_metric_decisions: tuple[MetricDecision, ...]
    impact_subscore: float = 0.0
    exploitability_subscore: float = 0.0


# ---------------------------------------------------------------------------
# Exploitation
# ---------------------------------------------------------------------------

class EventKind(str, Enum):
    CVE_PUBLISHED = "cve-published"
    POC_RELEASED = "poc-released"
    KEV_LISTED = "kev-listed"
    IN_WILD_OBSERVED = "in-wild-observed"
    ADVISORY_UPDATED = "advisory-updated"
    MALWARE_SEEN = "malware-seen"

    @classmethod
    def lenient(cls, value: str) -> "EventKind":
        """Unknown feed kinds fold into advisory-updated."""
        try:
            return cls(value)
        except ValueError:
            return cls.ADVISORY_UPDATED


# Tie order for events sharing a timestamp; lower sorts first.
SOURCE_PRIORITY = {"kev": 0, "exploit-db": 1, "virustotal": 2, "advisory": 3, "nvd": 4}


@dataclass(frozen=True)
class TemporalEvent:
    at: datetime
    kind: EventKind
    detail: str = ""
    source: str = ""

    def __post_init__(self):
        object.__setattr__(self, "at", parse_timestamp(self.at))
        object.__setattr__(self, "kind", EventKind(self.kind))

    def sort_key(self) -> tuple:
        return (self.at, SOURCE_PRIORITY.get(self.source, len(SOURCE_PRIORITY)), self.kind.value,
                self.source, self.detail)


@dataclass(frozen=True)
class TemporalNarrative:
    events: tuple[TemporalEvent, ...]
    gaps: tuple[timedelta, ...]
    window: tuple[datetime, datetime]

    def __post_init__(self):
        start, end = (parse_timestamp(t) for t in self.window)
        object.__setattr__(self, "window", (start, end))
        if start > end:
            raise ValueError("window start after end")
        if any(a.at > b.at for a, b in zip(self.events, self.events[1:])):
            raise ValueError("narrative events must be sorted by time")
        if len(self.gaps) != max(len(self.events) - 1, 0):
            raise ValueError("gap count must be one less than the event count")
        if any(not start <= e.at <= end for e in self.events):
            raise ValueError("narrative event outside its window")

    @classmethod
    def from_events(cls, events: Iterable[TemporalEvent], window: tuple[Any, Any]) -> "TemporalNarrative":
        ordered = tuple(sorted(events, key=TemporalEvent.sort_key))
        gaps = tuple(b.at - a.at for a, b in zip(ordered, ordered[1:]))
        return cls(ordered, gaps, window)


@dataclass(frozen=True)
class ExploitForecast:
    instance_id: str
    probability: float
    horizon_days: int = 30
    rationale: tuple[str, ...] = ()
    inputs_digest: str = ""
    method: str = "fallback"
    flagged: bool = False
    raw_probability: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability {self.probability} outside [0, 1]")
        if self.horizon_days <= 0:
            raise ValueError("horizon_days must be positive")


# ---------------------------------------------------------------------------
# Mitigation
# ---------------------------------------------------------------------------

class ActionKind(str, Enum):
    PATCH = "patch"
    WORKAROUND = "workaround"
    MITIGATION_NOTE = "mitigation-note"
    VENDOR_ADVISORY = "vendor-advisory"
    DETECTION = "detection"


class PatchMaturity(str, Enum):
    GA = "ga"
    HOTFIX = "hotfix"
    BETA = "beta"


class Complexity(str, Enum):
    SIMPLE = "simple"
    MODERATE = "moderate"
    COMPLEX = "complex"


# Lower rank = more authoritative.
SOURCE_AUTHORITY = {"vendor": 0, "kev": 1, "nvd": 2, "maintainer": 3, "cert": 4, "blog": 5}
KEY_SEPARATOR = "\x1f"


def source_authority(source: str) -> int:
    return SOURCE_AUTHORITY.get(source.split(":", 1)[0].strip().lower(), len(SOURCE_AUTHORITY))


def canonical_key(title: str, vendor: str, version: str) -> str:
    """128-bit hex digest of the normalized (title, vendor, version) triple."""
    parts = [" ".join((p or "").split()).lower() for p in (title, vendor, version)]
    return hashlib.sha256(KEY_SEPARATOR.join(parts).encode("utf-8")).hexdigest()[:32]


@dataclass(frozen=True)
class MitigationAction:
    kind: ActionKind
    title: str
    vendor: str = ""
    version_scope: str = ""
    released: Optional[date] = None
    supersedes: Optional[str] = None
    side_effects: str = ""
    source: str = ""
    canonical_key: str = field(default="", init=False)
    identifier: str = ""
    maturity: Optional[PatchMaturity] = None
    complexity: Complexity = Complexity.MODERATE
    disruption: int = 1
    superseded_by: Optional[str] = None
    reference: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", ActionKind(self.kind))
        object.__setattr__(self, "released", _opt(parse_date, self.released))
        object.__setattr__(self, "complexity", Complexity(self.complexity))
        if self.maturity is not None:
            object.__setattr__(self, "maturity", PatchMaturity(self.maturity))
        object.__setattr__(self, "canonical_key", canonical_key(self.title, self.vendor, self.version_scope))

    @property
    def authority(self) -> int:
        return source_authority(self.source)


@dataclass(frozen=True)
class RiskInputs:
    severity: float
    exploit_prob: float
    exposure_factor: float = 1.0
    criticality_factor: float = 1.0

    def __post_init__(self):
        from .errors import OutOfRange

        if not 0.0 <= self.severity <= 10.0:
            raise OutOfRange(f"severity {self.severity} outside [0, 10]")
        if not 0.0 <= self.exploit_prob <= 1.0:
            raise OutOfRange(f"exploit probability {self.exploit_prob} outside [0, 1]")
        for name in ("exposure_factor", "criticality_factor"):
            value = getattr(self, name)
            if not 0.0 < value <= 10.0:
                raise OutOfRange(f"{name} {value} outside (0, 10]")


@dataclass(frozen=True)
class PlanEntry:
    threat_id: str
    risk: float
    actions: tuple[MitigationAction, ...]
    phase: int
    dependencies: tuple[str, ...]
    justification: str
    target: str = ""
    eta: str = ""
    operational_notes: str = ""
    tie_breaker: Optional[str] = None


@dataclass(frozen=True)
class PlanFlag:
    threat_id: str
    reason: str
    recommendation: str


@dataclass(frozen=True)
class PrioritizedPlan:
    entries: tuple[PlanEntry, ...]
    flags: tuple[PlanFlag, ...] = ()

    def order(self) -> list[str]:
        return [e.threat_id for e in self.entries]


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

class Violation(NamedTuple):
    field: str
    problem: str


def _check_timestamp(value: Any, path: str, out: list[Violation]) -> None:
    if value is None:
        return
    try:
        parse_timestamp(value)
    except ValueError:
        out.append(Violation(path, f"not ISO 8601: {value!r}"))


def validate(item: EnrichedThreatInstance, incident_ids: Optional[Iterable[str]] = None) -> list[Violation]:
    """Collect every broken invariant; an empty list means the instance is valid."""
    out: list[Violation] = []
    inst, meta = item.instance, item.metadata
    if not inst.id:
        out.append(Violation("instance.id", "empty identifier"))
    if incident_ids is not None and inst.parent_incident not in set(incident_ids):
        out.append(Violation("instance.parent_incident", f"unknown incident {inst.parent_incident!r}"))
    cves = {c for c in inst.cve_ids}
    if len(cves) > 1:
        out.append(Violation("instance.indicators", f"more than one primary CVE: {sorted(cves)}"))
    if meta.cve_id is not None and not CVE_PATTERN.match(meta.cve_id):
        out.append(Violation("metadata.cve_id", f"does not match CVE-YYYY-NNNN+: {meta.cve_id!r}"))
    for n, tech in enumerate(meta.attack_techniques):
        if not TECHNIQUE_PATTERN.match(tech):
            out.append(Violation(f"metadata.attack_techniques[{n}]", f"not an ATT&CK technique id: {tech!r}"))
    if not isinstance(meta.exploitation_status, ExploitationStatus):
        out.append(Violation("metadata.exploitation_status", f"not a known status: {meta.exploitation_status!r}"))
    d = meta.disclosure
    for name in ("first_reported", "advisory_released", "patch_released", "last_updated"):
        _check_timestamp(getattr(d, name), f"metadata.disclosure.{name}", out)
    if meta.epss is not None:
        for name in ("probability", "percentile"):
            value = getattr(meta.epss, name)
            if not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
                out.append(Violation(f"metadata.epss.{name}", f"outside [0, 1]: {value!r}"))
        _check_timestamp(meta.epss.snapshot_date, "metadata.epss.snapshot_date", out)
    _check_timestamp(meta.kev_date_added, "metadata.kev_date_added", out)
    if meta.kev_listed and meta.exploitation_status is not ExploitationStatus.CONFIRMED_IN_WILD:
        out.append(Violation("metadata.exploitation_status", "KEV-listed but not confirmed-in-wild"))
    return out


# ---------------------------------------------------------------------------
# JSON interchange
# ---------------------------------------------------------------------------

def to_jsonable(obj: Any) -> Any:
    if isinstance(obj, CvssVector):
        return serialize_cvss_vector(obj)
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, datetime):
        return format_timestamp(obj)
    if isinstance(obj, date):
        return obj.isoformat()
    if isinstance(obj, timedelta):
        return int(obj.total_seconds())
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, Mapping):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    return obj


def dumps(obj: Any) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _require(data: Mapping[str, Any], key: str, where: str) -> Any:
    if not isinstance(data, Mapping) or key not in data:
        raise ConfigError(f"missing required field '{where}{key}'")
    return data[key]


def _tuple(values: Any) -> tuple:
    if values is None:
        return ()
    if isinstance(values, str):
        return (values,)
    return tuple(values)


def incident_from_dict(data: Mapping[str, Any]) -> RawIncident:
    try:
        return RawIncident(
            id=str(_require(data, "id", "")),
            text=_require(data, "text", ""),
            source=data.get("source", "unknown"),
            observed_at=_require(data, "observed_at", ""),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def instance_from_dict(data: Mapping[str, Any]) -> ThreatInstance:
    return ThreatInstance(
        id=str(_require(data, "id", "instance.")),
        parent_incident=str(_require(data, "parent_incident", "instance.")),
        vendor=_require(data, "vendor", "instance."),
        affected_components=_tuple(data.get("affected_components")),
        campaign=data.get("campaign"),
        impact=_require(data, "impact", "instance."),
        attack_patterns=_tuple(data.get("attack_patterns")),
        indicators=_tuple(data.get("indicators")),
        description=data.get("description", ""),
        source=data.get("source", ""),
    )


def metadata_from_dict(data: Mapping[str, Any]) -> Metadata:
    d = data.get("disclosure") or {}
    disclosure = Disclosure(
        channel=d.get("channel"),
        type=d.get("type"),
        first_reported=_opt(parse_timestamp, d.get("first_reported")),
        advisory_released=_opt(parse_timestamp, d.get("advisory_released")),
        patch_released=_opt(parse_timestamp, d.get("patch_released")),
        last_updated=_opt(parse_timestamp, d.get("last_updated")),
        patch_available=d.get("patch_available"),
    )
    e = data.get("epss")
    epss = None
    if e:
        epss = EpssScore(float(e["probability"]), float(e["percentile"]), parse_date(e["snapshot_date"]))
    return Metadata(
        cve_id=data.get("cve_id"),
        attack_techniques=_tuple(data.get("attack_techniques")),
        exploitation_status=ExploitationStatus(data.get("exploitation_status", "unknown")),
        affected_systems=tuple(AffectedSystem(**s) for s in data.get("affected_systems") or ()),
        disclosure=disclosure,
        epss=epss,
        kev_listed=bool(data.get("kev_listed", False)),
        kev_date_added=_opt(parse_date, data.get("kev_date_added")),
        context_texts=tuple(SourcedText(**c) for c in data.get("context_texts") or ()),
    )


def enriched_from_dict(data: Mapping[str, Any]) -> EnrichedThreatInstance:
    inst = instance_from_dict(_require(data, "instance", ""))
    meta = metadata_from_dict(_require(data, "metadata", ""))
    return EnrichedThreatInstance(inst, meta)


def evidence_from_dict(data: Mapping[str, Any]) -> EvidenceSpan:
    return EvidenceSpan(data["span"], data.get("source", ""), data.get("locator"))


def decision_from_dict(data: Mapping[str, Any]) -> MetricDecision:
    return MetricDecision(
        metric=Metric(data["metric"]),
        value=data["value"],
        evidence=tuple(evidence_from_dict(e) for e in data.get("evidence") or ()),
        rationale=data.get("rationale", ""),
        confidence=float(data.get("confidence", 0.0)),
        defaulted=bool(data.get("defaulted", False)),
    )


def assessment_from_dict(data: Mapping[str, Any]) -> StaticAssessment:
    return StaticAssessment(
        instance_id=str(_require(data, "instance_id", "assessment.")),
        vector=parse_cvss_vector(_require(data, "vector", "assessment.")),
        base_score=float(_require(data, "base_score", "assessment.")),
        rating=Rating(_require(data, "rating", "assessment.")),
        per_metric_decisions=tuple(decision_from_dict(d) for d in data.get("per_metric_decisions") or ()),
        impact_subscore=float(data.get("impact_subscore", 0.0)),
        exploitability_subscore=float(data.get("exploitability_subscore", 0.0)),
    )


def forecast_from_dict(data: Mapping[str, Any]) -> ExploitForecast:
    return ExploitForecast(
        instance_id=str(_require(data, "instance_id", "forecast.")),
        probability=float(_require(data, "probability", "forecast.")),
        horizon_days=int(data.get("horizon_days", 30)),
        rationale=_tuple(data.get("rationale")),
        inputs_digest=data.get("inputs_digest", ""),
        method=data.get("method", "fallback"),
        flagged=bool(data.get("flagged", False)),
        raw_probability=data.get("raw_probability"),
    )


def event_from_dict(data: Mapping[str, Any]) -> TemporalEvent:
    return TemporalEvent(
        at=data["at"],
        kind=EventKind.lenient(data["kind"]),
        detail=data.get("detail", ""),
        source=data.get("source", ""),
    )


def action_from_dict(data: Mapping[str, Any]) -> MitigationAction:
    known = {f.name for f in dataclasses.fields(MitigationAction) if f.init}
    kwargs = {k: v for k, v in data.items() if k in known}
    return MitigationAction(**kwargs)


def plan_from_dict(data: Mapping[str, Any]) -> PrioritizedPlan:
    entries = []
    for e in _require(data, "entries", "plan."):
        entries.append(PlanEntry(
            threat_id=str(_require(e, "threat_id", "plan.entries[].")),
            risk=float(_require(e, "risk", "plan.entries[].")),
            actions=tuple(action_from_dict(a) for a in e.get("actions", ())),
            phase=int(e.get("phase", 1)),
            dependencies=_tuple(e.get("dependencies")),
            justification=e.get("justification", ""),
            target=e.get("target", ""),
            eta=e.get("eta", ""),
            operational_notes=e.get("operational_notes", ""),
            tie_breaker=e.get("tie_breaker"),
        ))
    flags = tuple(PlanFlag(f["threat_id"], f["reason"], f["recommendation"]) for f in data.get("flags", ()))
    return PrioritizedPlan(tuple(entries), flags)


def digest(obj: Any) -> str:
    """sha256 over the canonical JSON form of ``obj``."""
    return hashlib.sha256(dumps(obj).encode("utf-8")).hexdigest()
