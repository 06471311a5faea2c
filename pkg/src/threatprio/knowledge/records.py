"""Normalized records served by the knowledge store, plus parsers for each feed format."""

from __future__ import annotations

import csv
import io
import logging
import re
from dataclasses import dataclass
from datetime import date, datetime, timezone
from enum import Enum
from typing import Any, Iterable, Mapping, Optional

from ..model import (
    AffectedSystem,
    CVE_PATTERN,
    CVE_SEARCH,
    EventKind,
    TemporalEvent,
    parse_date,
    parse_timestamp,
)

log = logging.getLogger(__name__)


class CveStatus(str, Enum):
    PUBLISHED = "published"
    RESERVED = "reserved"
    DISPUTED = "disputed"
    REJECTED = "rejected"


@dataclass(frozen=True)
class Reference:
    url: str
    tags: tuple[str, ...] = ()


@dataclass(frozen=True)
class CveRecord:
    cve_id: str
    description: str
    cvss_vector: Optional[str]
    published: datetime
    last_modified: datetime
    status: CveStatus = CveStatus.PUBLISHED
    references: tuple[Reference, ...] = ()
    affected: tuple[AffectedSystem, ...] = ()
    provenance: str = "fixture"


@dataclass(frozen=True)
class KevEntry:
    cve_id: str
    date_added: date
    due_date: Optional[date] = None
    notes: str = ""
    name: str = ""
    vendor_project: str = ""
    product: str = ""
    required_action: str = ""
    short_description: str = ""

    def __post_init__(self):
        if self.due_date is not None and self.due_date < self.date_added:
            raise ValueError(f"{self.cve_id}: KEV due date precedes date added")


@dataclass(frozen=True)
class EpssSnapshot:
    cve_id: str
    probability: float
    percentile: float
    snapshot_date: date

    def __post_init__(self):
        for name in ("probability", "percentile"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{self.cve_id}: EPSS {name} outside [0, 1]")


@dataclass(frozen=True)
class Remediation:
    """One remediation entry from a pre-normalized advisory."""

    kind: str
    title: str
    version_scope: str = ""
    released: Optional[date] = None
    identifier: str = ""
    maturity: Optional[str] = None
    supersedes: Optional[str] = None
    side_effects: str = ""
    complexity: str = "moderate"
    disruption: int = 1


@dataclass(frozen=True)
class Advisory:
    id: str
    revision: int
    vendor: str
    title: str
    published: datetime
    updated: datetime
    cves: tuple[str, ...]
    source: str = "vendor"
    channel: str = "vendor-advisory"
    type: str = "security-update"
    exploitation: Optional[str] = None
    text: str = ""
    url: str = ""
    events: tuple[TemporalEvent, ...] = ()
    remediations: tuple[Remediation, ...] = ()
    end_of_life: tuple[str, ...] = ()


# -- NVD ----------------------------------------------------------------------

def _status(vuln_status: str, description: str) -> CveStatus:
    if vuln_status.strip().lower() == "rejected" or description.startswith("** REJECT **"):
        return CveStatus.REJECTED
    if description.startswith("** DISPUTED **"):
        return CveStatus.DISPUTED
    if description.startswith("** RESERVED **") or vuln_status.strip().lower() == "reserved":
        return CveStatus.RESERVED
    return CveStatus.PUBLISHED


def _cpe_systems(configurations: Iterable[Mapping[str, Any]]) -> tuple[AffectedSystem, ...]:
    seen: dict[tuple[str, str, str], None] = {}
    for conf in configurations or ():
        for node in conf.get("nodes", ()):
            for match in node.get("cpeMatch", ()):
                if not match.get("vulnerable", True):
                    continue
                parts = match.get("criteria", "").split(":")
                if len(parts) < 6:
                    continue
                vendor, product, version = parts[3], parts[4], parts[5]
                bounds = []
                for key, op in (("versionStartIncluding", ">="), ("versionStartExcluding", ">"),
                                ("versionEndIncluding", "<="), ("versionEndExcluding", "<")):
                    if match.get(key):
                        bounds.append(f"{op}{match[key]}")
                rng = " ".join(bounds) or ("" if version in ("*", "-") else version)
                seen.setdefault((vendor, product, rng), None)
    return tuple(AffectedSystem(v, p, r) for v, p, r in seen)


def parse_nvd_response(doc: Mapping[str, Any], provenance: str = "fixture") -> Optional[CveRecord]:
    """First CVE of an NVD 2.0 ``/cves/2.0`` response, or None when the response is empty."""
    vulns = doc.get("vulnerabilities") or []
    if not vulns:
        return None
    cve = vulns[0]["cve"]
    description = next((d["value"] for d in cve.get("descriptions", ()) if d.get("lang") == "en"), "")
    vector = None
    for key in ("cvssMetricV31", "cvssMetricV30"):
        metrics = cve.get("metrics", {}).get(key) or []
        primary = [m for m in metrics if m.get("type") == "Primary"] or metrics
        if primary:
            vector = primary[0]["cvssData"]["vectorString"]
            break
    refs = tuple(Reference(r["url"], tuple(r.get("tags", ()))) for r in cve.get("references", ()))
    return CveRecord(
        cve_id=cve["id"],
        description=description,
        cvss_vector=vector,
        published=parse_timestamp(cve["published"]),
        last_modified=parse_timestamp(cve.get("lastModified", cve["published"])),
        status=_status(cve.get("vulnStatus", ""), description),
        references=refs,
        affected=_cpe_systems(cve.get("configurations", ())),
        provenance=provenance,
    )


# -- CISA KEV -----------------------------------------------------------------

def parse_kev_catalog(doc: Mapping[str, Any]) -> dict[str, KevEntry]:
    """Index the catalog by CVE id; duplicate rows resolve to the earliest ``dateAdded``."""
    out: dict[str, KevEntry] = {}
    for row in doc.get("vulnerabilities", ()):
        added = parse_date(row["dateAdded"])
        due = parse_date(row["dueDate"]) if row.get("dueDate") else None
        if due is not None and due < added:
            # early catalog rows carry deadlines from directives issued before the listing
            log.warning("KEV %s: dueDate %s precedes dateAdded %s; due date dropped", row["cveID"], due, added)
            due = None
        entry = KevEntry(
            cve_id=row["cveID"].upper(),
            date_added=added,
            due_date=due,
            notes=row.get("notes", ""),
            name=row.get("vulnerabilityName", ""),
            vendor_project=row.get("vendorProject", ""),
            product=row.get("product", ""),
            required_action=row.get("requiredAction", ""),
            short_description=row.get("shortDescription", ""),
        )
        prior = out.get(entry.cve_id)
        if prior is not None:
            log.warning("KEV catalog lists %s more than once; keeping the earliest dateAdded", entry.cve_id)
            if prior.date_added <= entry.date_added:
                continue
        out[entry.cve_id] = entry
    return out


# -- EPSS ---------------------------------------------------------------------

_SCORE_DATE = re.compile(r"score_date:([0-9T:+\-Z]+)")


def parse_epss_csv(text: str, snapshot_date: Optional[date] = None) -> tuple[date, dict[str, EpssSnapshot]]:
    """Parse a FIRST EPSS daily CSV; the snapshot date comes from the ``#model_version`` header."""
    lines = text.splitlines()
    if lines and lines[0].startswith("#"):
        m = _SCORE_DATE.search(lines[0])
        if m and snapshot_date is None:
            snapshot_date = parse_timestamp(m.group(1)).date()
        lines = lines[1:]
    if snapshot_date is None:
        raise ValueError("EPSS CSV has no score_date header and no snapshot date was given")
    rows: dict[str, EpssSnapshot] = {}
    for row in csv.DictReader(io.StringIO("\n".join(lines))):
        cve = row["cve"].strip().upper()
        rows[cve] = EpssSnapshot(cve, float(row["epss"]), float(row["percentile"]), snapshot_date)
    return snapshot_date, rows


def parse_epss_api(doc: Mapping[str, Any]) -> Optional[EpssSnapshot]:
    data = doc.get("data") or []
    if not data:
        return None
    row = data[0]
    return EpssSnapshot(row["cve"].upper(), float(row["epss"]), float(row["percentile"]), parse_date(row["date"]))


# -- Exploit-DB ---------------------------------------------------------------

def parse_exploitdb_csv(text: str) -> dict[str, list[TemporalEvent]]:
    """``files_exploits.csv`` rows become poc-released events keyed by every CVE in ``codes``."""
    out: dict[str, list[TemporalEvent]] = {}
    for row in csv.DictReader(io.StringIO(text)):
        codes = {c.upper() for c in CVE_SEARCH.findall(row.get("codes", ""))}
        if not codes or not row.get("date_published"):
            continue
        event = TemporalEvent(
            at=parse_timestamp(row["date_published"]),
            kind=EventKind.POC_RELEASED,
            detail=f"EDB-{row['id']}: {row.get('description', '').strip()}",
            source="exploit-db",
        )
        for cve in sorted(codes):
            out.setdefault(cve, []).append(event)
    return out


# -- VirusTotal ---------------------------------------------------------------

def parse_virustotal(doc: Mapping[str, Any]) -> list[TemporalEvent]:
    """File objects tagged with the CVE become malware-seen events at their first submission."""
    events = []
    for item in doc.get("data", ()):
        attrs = item.get("attributes", {})
        first = attrs.get("first_submission_date")
        if first is None:
            continue
        at = datetime.fromtimestamp(int(first), tz=timezone.utc)
        label = (attrs.get("popular_threat_classification") or {}).get("suggested_threat_label", "")
        name = attrs.get("meaningful_name", item.get("id", ""))
        events.append(TemporalEvent(at, EventKind.MALWARE_SEEN, f"{name} {label}".strip(), "virustotal"))
    return events


# -- vendor / CERT / blog advisories -----------------------------------------

def parse_advisory(doc: Mapping[str, Any]) -> Advisory:
    cves = tuple(c.upper() for c in doc.get("cves", ()) if CVE_PATTERN.match(c.upper()))
    events = tuple(
        TemporalEvent(e["at"], EventKind.lenient(e["kind"]), e.get("detail", ""), "advisory")
        for e in doc.get("events", ())
    )
    remediations = tuple(
        Remediation(
            kind=r["kind"],
            title=r["title"],
            version_scope=r.get("version_scope", ""),
            released=parse_date(r["released"]) if r.get("released") else None,
            identifier=r.get("identifier", ""),
            maturity=r.get("maturity"),
            supersedes=r.get("supersedes"),
            side_effects=r.get("side_effects", ""),
            complexity=r.get("complexity", "moderate"),
            disruption=int(r.get("disruption", 1)),
        )
        for r in doc.get("remediations", ())
    )
    published = parse_timestamp(doc["published"])
    return Advisory(
        id=doc["id"],
        revision=int(doc.get("revision", 1)),
        vendor=doc.get("vendor", ""),
        title=doc.get("title", ""),
        published=published,
        updated=parse_timestamp(doc.get("updated", doc["published"])),
        cves=cves,
        source=doc.get("source", "vendor"),
        channel=doc.get("channel", "vendor-advisory"),
        type=doc.get("type", "security-update"),
        exploitation=doc.get("exploitation"),
        text=doc.get("text", ""),
        url=doc.get("url", ""),
        events=events,
        remediations=remediations,
        end_of_life=tuple(doc.get("end_of_life", ())),
    )
