"""Incident triage: split raw incidents into single-threat instances and enrich them.

``separate_events`` asks the gateway to disentangle an incident and then
discards anything the model could not have read in the incident text.
``enrich`` attaches authoritative metadata from the knowledge store.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Iterable, Mapping, Optional

from .errors import GatewayError, GatewayFailure, KnowledgeError, NoSnapshotLoaded
from .gateway import Gateway
from .knowledge import Advisory, KnowledgeStore
from .model import (
    CVE_PATTERN,
    Disclosure,
    EnrichedThreatInstance,
    EpssScore,
    EventKind,
    ExploitationStatus,
    Metadata,
    RawIncident,
    SourcedText,
    ThreatInstance,
    format_timestamp,
    parse_timestamp,
)

log = logging.getLogger(__name__)

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)

# Authority for conflicting exploitation claims; lower wins.
CLAIM_AUTHORITY = {"kev": 0, "vendor": 1, "nvd": 2, "maintainer": 3, "cert": 4, "blog": 5}

_ADVISORY_STATUS = {
    "detected": ExploitationStatus.CONFIRMED_IN_WILD,
    "exploited": ExploitationStatus.CONFIRMED_IN_WILD,
    "in-wild": ExploitationStatus.CONFIRMED_IN_WILD,
    "confirmed-in-wild": ExploitationStatus.CONFIRMED_IN_WILD,
    "poc-public": ExploitationStatus.POC_PUBLIC,
    "publicly-disclosed": ExploitationStatus.POC_PUBLIC,
    "not-detected": ExploitationStatus.NO_EVIDENCE,
    "no-evidence": ExploitationStatus.NO_EVIDENCE,
    "none": ExploitationStatus.NO_EVIDENCE,
}


@dataclass
class EnrichmentReport:
    instance_id: str
    unresolved: list[str] = field(default_factory=list)
    conflicts: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


@dataclass
class TriageReport:
    warnings: list[str] = field(default_factory=list)
    failures: dict[str, str] = field(default_factory=dict)
    enrichment: list[EnrichmentReport] = field(default_factory=list)
    dropped: list[dict[str, str]] = field(default_factory=list)

    def merge(self, other: "TriageReport") -> None:
        self.warnings.extend(other.warnings)
        self.failures.update(other.failures)
        self.enrichment.extend(other.enrichment)
        self.dropped.extend(other.dropped)


def _locatable(needle: str, haystack: str) -> bool:
    needle = " ".join(needle.split()).casefold()
    return bool(needle) and needle in " ".join(haystack.split()).casefold()


def _strings(values: Any) -> tuple[str, ...]:
    if not values:
        return ()
    return tuple(str(v).strip() for v in values if str(v).strip())


class Triage:
    def __init__(self, gateway: Gateway, store: KnowledgeStore, max_workers: int = 4):
        self.gateway = gateway
        self.store = store
        self.max_workers = max(1, max_workers)

    # -- event separation ----------------------------------------------------

    def separate_events(self, incident: RawIncident, report: Optional[TriageReport] = None) -> list[ThreatInstance]:
        report = report if report is not None else TriageReport()
        bindings = {
            "SOURCE": incident.source,
            "OBSERVED_AT": format_timestamp(incident.observed_at),
            "RAW_INCIDENT_TEXT": incident.text,
        }
        try:
            result = self.gateway.complete("disentangle", bindings)
        except GatewayError as exc:
            raise GatewayFailure(f"incident {incident.id}: disentangle failed: {exc}") from exc

        drafts = []
        for raw in result.document.get("instances", []):
            draft = self._ground(incident, raw, report)
            if draft is not None:
                drafts.extend(self._split(incident, draft, report))

        claimed: set[str] = set()
        instances = []
        for draft in drafts:
            indicators = []
            for ind in draft["indicators"]:
                if CVE_PATTERN.match(ind):
                    if ind in claimed:
                        report.warnings.append(f"{incident.id}: {ind} already assigned to an earlier instance")
                        continue
                    claimed.add(ind)
                indicators.append(ind)
            instances.append(ThreatInstance(
                id=f"{incident.id}-{len(instances) + 1}",
                parent_incident=incident.id,
                vendor=draft["vendor"],
                affected_components=draft["affected_components"],
                campaign=draft["campaign"],
                impact=draft["impact"],
                attack_patterns=draft["attack_patterns"],
                indicators=tuple(indicators),
                description=draft["description"],
                source=incident.source,
            ))
        if not instances:
            report.warnings.append(f"{incident.id}: no threat instances extracted")
        return instances

    def _drop(self, report: TriageReport, incident_id: str, item: str, reason: str) -> None:
        log.warning("%s: dropped %r (%s)", incident_id, item, reason)
        report.dropped.append({"incident": incident_id, "item": item, "reason": reason})
        report.warnings.append(f"{incident_id}: dropped {item!r} ({reason})")

    def _ground(self, incident: RawIncident, raw: Mapping[str, Any], report: TriageReport) -> Optional[dict]:
        """Keep only content the incident (or a confirmed CVE record) supports."""
        text = incident.text
        components = _strings(raw.get("affected_components"))
        indicators: list[str] = []
        for ind in _strings(raw.get("indicators")):
            if not _locatable(ind, text):
                self._drop(report, incident.id, ind, "indicator not present in incident text")
                continue
            norm = ind.upper() if CVE_PATTERN.match(ind.upper()) else ind
            if norm not in indicators:
                indicators.append(norm)
        for alias in _strings(raw.get("cve_aliases")):
            alias = alias.upper()
            if alias in indicators:
                continue
            if self._confirm_alias(alias, components):
                indicators.append(alias)
            else:
                self._drop(report, incident.id, alias, "CVE alias not confirmed by the knowledge store")
        description = raw.get("description") or ""
        if description and not _locatable(description, text):
            self._drop(report, incident.id, description[:80], "description is not a verbatim excerpt")
            description = ""
        if not indicators and not description:
            self._drop(report, incident.id, raw.get("impact", "") or "<instance>", "instance has no grounded content")
            return None
        return {
            "vendor": str(raw.get("vendor", "")),
            "affected_components": components,
            "campaign": raw.get("campaign") or None,
            "impact": str(raw.get("impact", "")),
            "attack_patterns": _strings(raw.get("attack_patterns")),
            "indicators": tuple(indicators),
            "description": description,
        }

    def _confirm_alias(self, alias: str, components: Iterable[str]) -> bool:
        if not CVE_PATTERN.match(alias):
            return False
        try:
            record = self.store.lookup_cve(alias)
        except KnowledgeError as exc:
            log.warning("alias %s could not be checked: %s", alias, exc)
            return False
        if record is None:
            return False
        return any(_locatable(c, record.description) for c in components)

    def _split(self, incident: RawIncident, draft: dict, report: TriageReport) -> list[dict]:
        cves = [i for i in draft["indicators"] if CVE_PATTERN.match(i)]
        if len(cves) <= 1:
            return [draft]
        report.warnings.append(f"{incident.id}: instance carried {len(cves)} CVE ids; split mechanically")
        others = tuple(i for i in draft["indicators"] if not CVE_PATTERN.match(i))
        return [dict(draft, indicators=(cve,) + others) for cve in cves]

    # -- enrichment ----------------------------------------------------------

    def enrich(self, instance: ThreatInstance) -> tuple[EnrichedThreatInstance, EnrichmentReport]:
        report = EnrichmentReport(instance.id)
        cves = instance.cve_ids
        if not cves:
            report.unresolved += ["cve_id", "exploitation_status", "epss", "attack_techniques"]
            return EnrichedThreatInstance(instance, Metadata()), report
        cve = cves[0]
        store = self.store
        texts: list[SourcedText] = []

        record = store.lookup_cve(cve)
        if record is None:
            report.unresolved.append("cve_record")
        else:
            texts.append(SourcedText("nvd", record.description, cve))

        kev = store.lookup_kev(cve)
        if kev is not None:
            kev_text = " ".join(t for t in (kev.short_description, kev.notes) if t)
            if kev_text:
                texts.append(SourcedText("kev", kev_text, "CISA KEV"))

        epss = None
        try:
            snap = store.lookup_epss(cve)
            if snap is not None:
                epss = EpssScore(snap.probability, snap.percentile, snap.snapshot_date)
        except NoSnapshotLoaded:
            pass
        if epss is None:
            report.unresolved.append("epss")

        techniques = tuple(store.techniques_for(cve))
        if not techniques:
            report.unresolved.append("attack_techniques")

        advisories = store.advisories_for(cve)
        for adv in sorted(advisories, key=lambda a: (CLAIM_AUTHORITY.get(a.source, 9), a.id)):
            if adv.text:
                texts.append(SourcedText(adv.source, adv.text, adv.id))

        horizon_end = store.as_of or datetime(9999, 1, 1, tzinfo=timezone.utc)
        events = store.query_exploit_events(cve, (EPOCH, horizon_end))
        status = self._exploitation_status(cve, kev is not None, advisories, events, report)

        metadata = Metadata(
            cve_id=cve,
            attack_techniques=techniques,
            exploitation_status=status,
            affected_systems=record.affected if record else (),
            disclosure=self._disclosure(record, advisories),
            epss=epss,
            kev_listed=kev is not None,
            kev_date_added=kev.date_added if kev else None,
            context_texts=tuple(texts),
        )
        return EnrichedThreatInstance(instance, metadata), report

    @staticmethod
    def _exploitation_status(cve: str, kev_listed: bool, advisories: list[Advisory], events, report) -> ExploitationStatus:
        claims: list[tuple[int, ExploitationStatus, str]] = []
        if kev_listed:
            claims.append((CLAIM_AUTHORITY["kev"], ExploitationStatus.CONFIRMED_IN_WILD, "kev"))
        for adv in advisories:
            status = _ADVISORY_STATUS.get((adv.exploitation or "").strip().lower())
            if status is not None:
                claims.append((CLAIM_AUTHORITY.get(adv.source, 9), status, f"{adv.source}:{adv.id}"))
        has_poc = any(e.kind is EventKind.POC_RELEASED for e in events)
        in_wild = [e for e in events if e.kind is EventKind.IN_WILD_OBSERVED]
        if not claims:
            if in_wild:
                return ExploitationStatus.CONFIRMED_IN_WILD
            return ExploitationStatus.POC_PUBLIC if has_poc else ExploitationStatus.UNKNOWN
        claims.sort(key=lambda c: (c[0], c[2]))
        _, chosen, by = claims[0]
        for _, status, source in claims[1:]:
            if status is not chosen:
                report.conflicts.append(
                    f"{cve}: {source} reports {status.value}; {by} is more authoritative ({chosen.value})")
        if chosen is ExploitationStatus.NO_EVIDENCE and has_poc:
            report.conflicts.append(f"{cve}: public PoC recorded; status raised to poc-public")
            chosen = ExploitationStatus.POC_PUBLIC
        return chosen

    @staticmethod
    def _disclosure(record, advisories: list[Advisory]) -> Disclosure:
        if record is None and not advisories:
            return Disclosure()
        official = [a for a in advisories if a.source == "vendor"] or advisories
        primary = min(official, key=lambda a: (a.published, a.id)) if official else None
        reported = [a.published for a in advisories] + ([record.published] if record else [])
        patches = [r.released for a in advisories for r in a.remediations if r.kind == "patch" and r.released]
        nvd_patch = bool(record) and any("Patch" in ref.tags for ref in record.references)
        return Disclosure(
            channel=primary.channel if primary else "nvd",
            type=primary.type if primary else "cve-record",
            first_reported=min(reported) if reported else None,
            advisory_released=primary.published if primary else None,
            patch_released=parse_timestamp(min(patches)) if patches else None,
            last_updated=max([a.updated for a in advisories] + ([record.last_modified] if record else [])),
            patch_available=bool(patches) or nvd_patch,
        )

    # -- batch ---------------------------------------------------------------

    def triage_incident(self, incident: RawIncident) -> tuple[list[EnrichedThreatInstance], TriageReport]:
        report = TriageReport()
        out = []
        for inst in self.separate_events(incident, report):
            enriched, er = self.enrich(inst)
            report.enrichment.append(er)
            out.append(enriched)
        return out, report

    def triage_batch(self, incidents: Iterable[RawIncident]) -> tuple[list[EnrichedThreatInstance], TriageReport]:
        """Triage incidents concurrently; output order is (incident id, instance index)."""
        ordered = sorted(incidents, key=lambda i: i.id)
        report = TriageReport()
        if not ordered:
            return [], report

        def run(incident: RawIncident):
            try:
                return incident, self.triage_incident(incident), None
            except (GatewayFailure, KnowledgeError, ValueError) as exc:
                return incident, None, exc

        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            results = list(pool.map(run, ordered))
        out: list[EnrichedThreatInstance] = []
        for incident, res, exc in results:
            if exc is not None:
                log.error("triage failed for %s: %s", incident.id, exc)
                report.failures[incident.id] = str(exc)
                continue
            items, sub = res
            report.merge(sub)
            out.extend(items)
        return out, report
