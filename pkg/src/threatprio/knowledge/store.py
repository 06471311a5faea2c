"""Knowledge-store facade: cache -> fixture -> live lookups with an as-of cutoff."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from datetime import date, datetime, time as dtime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Union

import httpx

from ..errors import MalformedId, NoSnapshotLoaded, SourceUnavailable
from ..model import CVE_PATTERN, SOURCE_PRIORITY, EventKind, TemporalEvent, parse_timestamp
from .attack import AttackCatalog, load_catalog
from .cache import JsonCache
from .records import (
    Advisory,
    CveRecord,
    EpssSnapshot,
    KevEntry,
    parse_advisory,
    parse_epss_api,
    parse_epss_csv,
    parse_exploitdb_csv,
    parse_kev_catalog,
    parse_nvd_response,
    parse_virustotal,
)

log = logging.getLogger(__name__)

NVD_URL = "https://services.nvd.nist.gov/rest/json/cves/2.0"
KEV_URL = "https://www.cisa.gov/sites/default/files/feeds/known_exploited_vulnerabilities.json"
EPSS_URL = "https://api.first.org/data/v1/epss"
EXPLOITDB_URL = "https://gitlab.com/exploit-database/exploitdb/-/raw/main/files_exploits.csv"
VT_URL = "https://www.virustotal.com/api/v3/intelligence/search"

ENV_NVD_KEY = "THREATPRIO_NVD_API_KEY"
ENV_VT_KEY = "THREATPRIO_VT_API_KEY"

PathLike = Union[str, Path]


def as_of_cutoff(value: Any) -> datetime:
    """A bare date means "everything published on that day is known"."""
    if isinstance(value, date) and not isinstance(value, datetime):
        return datetime.combine(value, dtime(23, 59, 59), tzinfo=timezone.utc)
    if isinstance(value, str) and len(value.strip()) == 10:
        return as_of_cutoff(date.fromisoformat(value.strip()))
    return parse_timestamp(value)


def normalize_cve_id(cve_id: str) -> str:
    text = (cve_id or "").strip().upper()
    if not CVE_PATTERN.match(text):
        raise MalformedId(f"not a CVE identifier: {cve_id!r}")
    return text


class _Throttle:
    """Minimum spacing between live requests to one source."""

    def __init__(self, interval: float, sleep: Callable[[float], None], clock: Callable[[], float]):
        self.interval = interval
        self._sleep = sleep
        self._clock = clock
        self._next = 0.0
        self._lock = threading.Lock()

    def wait(self) -> None:
        with self._lock:
            now = self._clock()
            if now < self._next:
                self._sleep(self._next - now)
                now = self._next
            self._next = now + self.interval


class KnowledgeStore:
    """Read access to NVD, KEV, EPSS, Exploit-DB, VirusTotal, advisories and ATT&CK.

    Every answer is filtered through ``as_of``: nothing whose source timestamp
    is later than the cutoff is ever returned. In offline mode the store never
    opens a socket.
    """

    def __init__(
        self,
        fixture_dir: Optional[PathLike] = None,
        cache_dir: Optional[PathLike] = None,
        as_of: Any = None,
        offline: bool = True,
        virustotal: bool = False,
        client: Optional[httpx.Client] = None,
        min_interval: float = 0.0,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.fixture_dir = Path(fixture_dir) if fixture_dir else None
        self.cache = JsonCache(cache_dir) if cache_dir else None
        self.as_of = as_of_cutoff(as_of) if as_of is not None else None
        self.offline = offline
        self.virustotal = virustotal
        self._client = client
        self._throttles = {s: _Throttle(min_interval, sleep, clock) for s in ("nvd", "kev", "epss", "exploitdb", "vt")}
        self._lock = threading.RLock()
        self._loaded: dict[str, Any] = {}
        self.warnings: list[str] = []
        self.network_calls = 0

    # -- bookkeeping ---------------------------------------------------------

    def warn(self, message: str) -> None:
        log.warning(message)
        with self._lock:
            if message not in self.warnings:
                self.warnings.append(message)

    def _visible(self, when: Any) -> bool:
        if self.as_of is None or when is None:
            return True
        if isinstance(when, date) and not isinstance(when, datetime):
            return when <= self.as_of.date()
        return parse_timestamp(when) <= self.as_of

    def _fixture(self, *parts: str) -> Optional[Path]:
        if self.fixture_dir is None:
            return None
        path = self.fixture_dir.joinpath(*parts)
        return path if path.exists() else None

    def _memo(self, name: str, loader: Callable[[], Any]) -> Any:
        with self._lock:
            if name not in self._loaded:
                self._loaded[name] = loader()
            return self._loaded[name]

    def _get(self, source: str, url: str, params: Optional[dict] = None, headers: Optional[dict] = None) -> httpx.Response:
        if self.offline:
            raise SourceUnavailable(f"{source}: live access disabled in offline mode")
        self._throttles[source].wait()
        client = self._client or httpx.Client(timeout=30.0)
        with self._lock:
            self.network_calls += 1
        try:
            resp = client.get(url, params=params, headers=headers or {})
        except httpx.HTTPError as exc:
            raise SourceUnavailable(f"{source}: {exc}") from exc
        if resp.status_code >= 400:
            raise SourceUnavailable(f"{source}: HTTP {resp.status_code}")
        return resp

    def _cached_or_live(self, source: str, key: str, fetch: Callable[[], Any]) -> Optional[Any]:
        if self.cache is not None:
            hit = self.cache.get(source, key)
            if hit is not None:
                return hit
        if self.offline:
            return None
        payload = fetch()
        if self.cache is not None:
            self.cache.put(source, key, payload)
        return payload

    # -- NVD -----------------------------------------------------------------

    def lookup_cve(self, cve_id: str) -> Optional[CveRecord]:
        cve_id = normalize_cve_id(cve_id)
        record = self._lookup_cve_any(cve_id)
        if record is None:
            return None
        if not self._visible(record.published):
            return None
        if not self._visible(record.last_modified):
            # the record text may already reflect post-cutoff knowledge
            self.warn(f"{cve_id}: NVD record modified after as-of date; treated as unavailable")
            return None
        return record

    def _lookup_cve_any(self, cve_id: str) -> Optional[CveRecord]:
        if self.cache is not None:
            hit = self.cache.get("nvd", cve_id)
            if hit is not None:
                return parse_nvd_response(hit, provenance="cache")
        path = self._fixture("nvd", f"{cve_id}.json")
        if path is not None:
            return self._memo(f"nvd:{cve_id}", lambda: parse_nvd_response(json.loads(path.read_text("utf-8"))))
        if self.offline:
            return None
        headers = {"apiKey": os.environ[ENV_NVD_KEY]} if os.environ.get(ENV_NVD_KEY) else None
        payload = self._get("nvd", NVD_URL, params={"cveId": cve_id}, headers=headers).json()
        if self.cache is not None:
            self.cache.put("nvd", cve_id, payload)
        return parse_nvd_response(payload, provenance="live")

    def fetch_nvd_raw(self, cve_id: str) -> dict:
        """Live NVD response for one CVE, written through to the cache when one is configured."""
        cve_id = normalize_cve_id(cve_id)
        if self.offline:
            raise SourceUnavailable("nvd: offline mode forbids live fetches")
        headers = {"apiKey": os.environ[ENV_NVD_KEY]} if os.environ.get(ENV_NVD_KEY) else None
        payload = self._get("nvd", NVD_URL, params={"cveId": cve_id}, headers=headers).json()
        if self.cache is not None:
            self.cache.put("nvd", cve_id, payload)
        return payload

    # -- KEV -----------------------------------------------------------------

    def _kev_catalog(self) -> dict[str, KevEntry]:
        def load() -> dict[str, KevEntry]:
            path = self._fixture("kev.json")
            if path is not None:
                return parse_kev_catalog(json.loads(path.read_text("utf-8")))
            try:
                doc = self._cached_or_live("kev", "catalog", lambda: self._get("kev", KEV_URL).json())
            except SourceUnavailable as exc:
                self.warn(f"KEV catalog unavailable: {exc}")
                return {}
            return parse_kev_catalog(doc) if doc else {}

        return self._memo("kev", load)

    def lookup_kev(self, cve_id: str) -> Optional[KevEntry]:
        entry = self._kev_catalog().get(normalize_cve_id(cve_id))
        if entry is None or not self._visible(entry.date_added):
            return None
        return entry

    # -- EPSS ----------------------------------------------------------------

    def _epss_snapshots(self) -> list[tuple[date, dict[str, EpssSnapshot]]]:
        def load() -> list[tuple[date, dict[str, EpssSnapshot]]]:
            path = self._fixture("epss")
            if path is None:
                return []
            snaps = [parse_epss_csv(p.read_text("utf-8")) for p in sorted(path.glob("*.csv"))]
            return sorted(snaps, key=lambda s: s[0])

        return self._memo("epss", load)

    def lookup_epss(self, cve_id: str, as_of: Any = None) -> Optional[EpssSnapshot]:
        """Latest snapshot dated on or before ``as_of`` (defaults to the store cutoff)."""
        cve_id = normalize_cve_id(cve_id)
        cutoff = as_of_cutoff(as_of) if as_of is not None else self.as_of
        if self.as_of is not None and cutoff is not None and cutoff > self.as_of:
            cutoff = self.as_of
        snaps = self._epss_snapshots()
        if snaps:
            best = None
            for snap_date, rows in snaps:
                if cutoff is not None and snap_date > cutoff.date():
                    break
                if cve_id in rows:
                    best = rows[cve_id]
            return best
        if self.offline:
            raise NoSnapshotLoaded("no EPSS snapshots available in the fixture directory")
        day = (cutoff or datetime.now(timezone.utc)).date().isoformat()
        doc = self._cached_or_live("epss", f"{cve_id}@{day}",
                                   lambda: self._get("epss", EPSS_URL, params={"cve": cve_id, "date": day}).json())
        snap = parse_epss_api(doc) if doc else None
        if snap is not None and cutoff is not None and snap.snapshot_date > cutoff.date():
            return None
        return snap

    # -- events --------------------------------------------------------------

    def _exploitdb(self) -> dict[str, list[TemporalEvent]]:
        def load() -> dict[str, list[TemporalEvent]]:
            path = self._fixture("exploitdb.csv")
            if path is not None:
                return parse_exploitdb_csv(path.read_text("utf-8"))
            try:
                text = self._cached_or_live("exploitdb", "files_exploits.csv",
                                            lambda: self._get("exploitdb", EXPLOITDB_URL).text)
            except SourceUnavailable as exc:
                self.warn(f"Exploit-DB unavailable: {exc}")
                return {}
            return parse_exploitdb_csv(text) if text else {}

        return self._memo("exploitdb", load)

    def _virustotal(self, cve_id: str) -> list[TemporalEvent]:
        if not self.virustotal:
            return []
        path = self._fixture("virustotal", f"{cve_id}.json")
        if path is not None:
            return parse_virustotal(json.loads(path.read_text("utf-8")))
        key = os.environ.get(ENV_VT_KEY)
        if self.offline or not key:
            return []
        doc = self._cached_or_live("vt", cve_id, lambda: self._get(
            "vt", VT_URL, params={"query": f"tag:{cve_id.lower()}"}, headers={"x-apikey": key}).json())
        return parse_virustotal(doc) if doc else []

    def _all_advisories(self) -> list[Advisory]:
        def load() -> list[Advisory]:
            path = self._fixture("advisories")
            if path is None:
                return []
            return [parse_advisory(json.loads(p.read_text("utf-8"))) for p in sorted(path.glob("*.json"))]

        return self._memo("advisories", load)

    def advisories_for(self, cve_id: str) -> list[Advisory]:
        """Latest visible revision of every advisory naming the CVE, ordered by id."""
        cve_id = normalize_cve_id(cve_id)
        latest: dict[str, Advisory] = {}
        for adv in self._all_advisories():
            if cve_id not in adv.cves or not (self._visible(adv.published) and self._visible(adv.updated)):
                continue
            prior = latest.get(adv.id)
            if prior is None or adv.revision > prior.revision:
                latest[adv.id] = adv
        return [latest[k] for k in sorted(latest)]

    def advisories_matching(self, text: str) -> list[Advisory]:
        """Visible advisories with no CVE whose title occurs in ``text``; used for CVE-less threats."""
        lowered = text.lower()
        latest: dict[str, Advisory] = {}
        for adv in self._all_advisories():
            if adv.cves or not adv.title or adv.title.lower() not in lowered:
                continue
            if not (self._visible(adv.published) and self._visible(adv.updated)):
                continue
            if adv.id not in latest or adv.revision > latest[adv.id].revision:
                latest[adv.id] = adv
        return [latest[k] for k in sorted(latest)]

    def query_exploit_events(self, cve_id: str, window: tuple[Any, Any]) -> list[TemporalEvent]:
        """Merged exploitation events for one CVE inside ``window`` (inclusive).

        Events sharing (kind, calendar date) collapse to the one from the
        highest-priority source. A failing source only costs its own events.
        """
        cve_id = normalize_cve_id(cve_id)
        start, end = (parse_timestamp(w) for w in window)
        if start > end:
            raise ValueError("window start after end")
        collected: list[TemporalEvent] = []
        fetchers: list[tuple[str, Callable[[], Iterable[TemporalEvent]]]] = [
            ("nvd", lambda: self._nvd_events(cve_id)),
            ("kev", lambda: self._kev_events(cve_id)),
            ("exploit-db", lambda: self._exploitdb().get(cve_id, [])),
            ("virustotal", lambda: self._virustotal(cve_id)),
            ("advisory", lambda: [e for a in self.advisories_for(cve_id) for e in a.events]),
        ]
        for name, fetch in fetchers:
            try:
                collected.extend(fetch())
            except (SourceUnavailable, OSError, ValueError) as exc:
                self.warn(f"{cve_id}: {name} events unavailable ({exc})")
        best: dict[tuple[EventKind, date], TemporalEvent] = {}
        for ev in collected:
            if not (start <= ev.at <= end) or not self._visible(ev.at):
                continue
            key = (ev.kind, ev.at.date())
            prior = best.get(key)
            if prior is None or _event_rank(ev) < _event_rank(prior):
                best[key] = ev
        return sorted(best.values(), key=TemporalEvent.sort_key)

    def _nvd_events(self, cve_id: str) -> list[TemporalEvent]:
        record = self.lookup_cve(cve_id)
        if record is None:
            return []
        return [TemporalEvent(record.published, EventKind.CVE_PUBLISHED, record.description[:160], "nvd")]

    def _kev_events(self, cve_id: str) -> list[TemporalEvent]:
        entry = self.lookup_kev(cve_id)
        if entry is None:
            return []
        return [TemporalEvent(entry.date_added, EventKind.KEV_LISTED, entry.name or "added to CISA KEV", "kev")]

    # -- ATT&CK --------------------------------------------------------------

    @property
    def attack(self) -> AttackCatalog:
        return load_catalog()

    def techniques_for(self, cve_id: str) -> list[str]:
        """CVE -> technique mapping, restricted to ids present in the vendored catalog."""
        cve_id = normalize_cve_id(cve_id)

        def load() -> dict[str, list[str]]:
            path = self._fixture("attack_mapping.json")
            return json.loads(path.read_text("utf-8")) if path is not None else {}

        out = []
        for tech in self._memo("attack_mapping", load).get(cve_id, []):
            if tech in self.attack:
                out.append(tech)
            else:
                self.warn(f"{cve_id}: technique {tech} is not in the vendored ATT&CK catalog; dropped")
        return out


def _event_rank(ev: TemporalEvent) -> tuple:
    return (SOURCE_PRIORITY.get(ev.source, len(SOURCE_PRIORITY)), ev.at, ev.detail)
