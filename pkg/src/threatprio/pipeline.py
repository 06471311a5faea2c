"""Stage orchestration over an on-disk output tree.

Every stage reads the previous stage's files, so any stage can be rerun on
its own. Outputs are canonical JSON; nothing time-of-run is written into the
tree, which keeps fixture-mode runs byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Sequence, TypeVar

import yaml

from .errors import ConfigError, KnowledgeError, StageFailure, ThreatPrioError
from .exploitation import HORIZONS, Forecaster, build_narrative, history_window, parse_window, window_label
from .gateway import Gateway, HttpBackend, RecordingBackend, ScriptedBackend, StubBackend
from .knowledge import KnowledgeStore
from .mitigation import MitigationPlanner, PhasePolicy, PlanConstraints, PlanInput, RetrievalReport, plan_document, prioritize
from .model import (
    EnrichedThreatInstance,
    ExploitForecast,
    RawIncident,
    RiskInputs,
    StaticAssessment,
    assessment_from_dict,
    dumps,
    enriched_from_dict,
    forecast_from_dict,
    incident_from_dict,
    parse_timestamp,
    to_jsonable,
)
from .static_analysis import StaticAnalyzer
from .triage import Triage

log = logging.getLogger(__name__)

STAGES = ("triage", "assess", "forecast", "mitigate")
BACKENDS = ("stub", "http", "authored", "none")
REQUIRED_KEYS = ("backend", "as_of", "incidents", "knowledge_dir")
# where output goes and how many threads run never change the outputs themselves
_UNDIGESTED = ("base_dir", "output_dir", "max_workers")

T = TypeVar("T")


@dataclass(frozen=True)
class AssetFactors:
    exposure: float = 1.0
    criticality: float = 1.0
    label: str = ""


@dataclass
class Config:
    backend: str
    as_of: str
    incidents: Path
    knowledge_dir: Path
    base_dir: Path = Path(".")
    offline: bool = True
    gateway_fixtures: Optional[Path] = None
    authored: Optional[Path] = None
    cache_dir: Optional[Path] = None
    horizon: int = 30
    window: str = "1y"
    seed: int = 0
    output_dir: Path = Path("out")
    max_workers: int = 4
    phase_days: int = 7
    assets: dict[str, AssetFactors] = field(default_factory=dict)
    constraints: dict[str, PlanConstraints] = field(default_factory=dict)
    evaluation: dict[str, Any] = field(default_factory=dict)

    def asset_for(self, t: EnrichedThreatInstance) -> AssetFactors:
        for key in (t.id, t.instance.parent_incident, "default"):
            if key in self.assets:
                return self.assets[key]
        return AssetFactors()

    def digest(self) -> str:
        """Run-relevant settings, with paths made relative so the digest is location-independent."""
        doc = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in _UNDIGESTED}
        for key, value in doc.items():
            if isinstance(value, Path):
                try:
                    doc[key] = value.relative_to(self.base_dir).as_posix()
                except ValueError:
                    doc[key] = value.name
        return hashlib.sha256(dumps(doc).encode("utf-8")).hexdigest()


def _path(base: Path, value: Any) -> Optional[Path]:
    if value in (None, ""):
        return None
    p = Path(str(value)).expanduser()
    return p if p.is_absolute() else base / p


def load_config(path: Path | str, overrides: Optional[Mapping[str, Any]] = None) -> Config:
    """Read the YAML config; ``overrides`` (command-line flags) win over file values."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text("utf-8")) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping")
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    for key in REQUIRED_KEYS:
        if raw.get(key) in (None, ""):
            raise ConfigError(f"missing required field '{key}'")
    base = path.resolve().parent
    backend = str(raw["backend"])
    if backend not in BACKENDS:
        raise ConfigError(f"backend must be one of {', '.join(BACKENDS)}, got {backend!r}")
    horizon = int(raw.get("horizon", 30))
    if horizon not in HORIZONS:
        raise ConfigError(f"horizon must be one of {HORIZONS}, got {horizon}")
    try:
        parse_window(raw.get("window", "1y"))
        parse_timestamp(raw["as_of"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    assets = {}
    for key, spec in (raw.get("assets") or {}).items():
        try:
            assets[str(key)] = AssetFactors(float(spec.get("exposure", 1.0)), float(spec.get("criticality", 1.0)),
                                            str(spec.get("label", "")))
        except (AttributeError, TypeError, ValueError) as exc:
            raise ConfigError(f"assets.{key}: {exc}") from exc
    constraints = {}
    for key, spec in (raw.get("constraints") or {}).items():
        constraints[str(key)] = PlanConstraints(
            depends_on=tuple(spec.get("depends_on", ())),
            earliest_phase=int(spec.get("earliest_phase", 1)),
            end_of_life=bool(spec.get("end_of_life", False)),
            notes=str(spec.get("notes", "")),
        )
    cfg = Config(
        backend=backend,
        as_of=str(raw["as_of"]),
        incidents=_path(base, raw["incidents"]),
        knowledge_dir=_path(base, raw["knowledge_dir"]),
        base_dir=base,
        offline=bool(raw.get("offline", True)),
        gateway_fixtures=_path(base, raw.get("gateway_fixtures")),
        authored=_path(base, raw.get("authored")),
        cache_dir=_path(base, raw.get("cache_dir")),
        horizon=horizon,
        window=str(raw.get("window", "1y")),
        seed=int(raw.get("seed", 0)),
        output_dir=_path(base, raw.get("output_dir", "out")),
        max_workers=max(1, int(raw.get("max_workers", 4))),
        phase_days=int(raw.get("phase_days", 7)),
        assets=assets,
        constraints=constraints,
        evaluation=dict(raw.get("evaluation") or {}),
    )
    if cfg.backend == "stub" and cfg.gateway_fixtures is None:
        raise ConfigError("missing required field 'gateway_fixtures' (needed by the stub backend)")
    if cfg.backend == "authored" and cfg.authored is None:
        raise ConfigError("missing required field 'authored' (needed by the authored backend)")
    return cfg


# -- wiring -------------------------------------------------------------------------

def build_store(cfg: Config) -> KnowledgeStore:
    return KnowledgeStore(cfg.knowledge_dir, cfg.cache_dir, as_of=cfg.as_of, offline=cfg.offline)


def build_gateway(cfg: Config, record_to: Optional[Path] = None) -> Optional[Gateway]:
    if cfg.backend == "none":
        return None
    if cfg.backend == "stub":
        backend: Any = StubBackend(cfg.gateway_fixtures)
    elif cfg.backend == "http":
        backend = HttpBackend()
    else:
        from .authoring import AuthoredResponder

        backend = ScriptedBackend(AuthoredResponder.from_file(cfg.authored))
    if record_to is not None:
        backend = RecordingBackend(backend, record_to)
    return Gateway(backend, max_in_flight=cfg.max_workers)


# -- output tree --------------------------------------------------------------------

def _write(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = obj if isinstance(obj, str) else dumps(obj)
    if path.exists() and path.read_text("utf-8") == text:
        return
    path.write_text(text, encoding="utf-8")


def _read_dir(directory: Path, loader: Callable[[Mapping[str, Any]], T], stage: str) -> list[T]:
    if not directory.is_dir():
        raise ConfigError(f"no {stage} outputs at {directory}; run the {stage} stage first")
    out = []
    for p in sorted(directory.glob("*.json")):
        try:
            out.append(loader(json.loads(p.read_text("utf-8"))))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
        except ConfigError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
    return out


def _clear(directory: Path) -> None:
    if directory.is_dir():
        for p in directory.glob("*.json"):
            p.unlink()


def load_incidents(path: Path) -> list[RawIncident]:
    if not path.exists():
        raise ConfigError(f"incident file {path} does not exist")
    out = []
    for n, line in enumerate(path.read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(incident_from_dict(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{n}: invalid JSON ({exc})") from exc
        except ConfigError as exc:
            raise ConfigError(f"{path}:{n}: {exc}") from exc
    return out


def _pmap(fn: Callable[[Any], T], items: Sequence[Any], workers: int) -> list[T]:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


class Pipeline:
    def __init__(self, cfg: Config, gateway: Optional[Gateway] = None, store: Optional[KnowledgeStore] = None,
                 out_dir: Optional[Path] = None):
        self.cfg = cfg
        self.gateway = gateway
        self.store = store or build_store(cfg)
        self.out = Path(out_dir or cfg.output_dir)

    # each stage returns the ids it wrote

    def triage(self) -> list[str]:
        incidents = load_incidents(self.cfg.incidents)
        cutoff = parse_timestamp(self.cfg.as_of)
        later = [i.id for i in incidents if i.observed_at > cutoff]
        if later:
            log.warning("skipping %d incident(s) observed after as_of: %s", len(later), ", ".join(later))
            incidents = [i for i in incidents if i.observed_at <= cutoff]
        if self.gateway is None:
            raise ConfigError("the triage stage needs a gateway backend (stub, http or authored)")
        triage = Triage(self.gateway, self.store, self.cfg.max_workers)
        instances, report = triage.triage_batch(incidents)
        _clear(self.out / "instances")
        for t in instances:
            _write(self.out / "instances" / f"{t.id}.json", t)
        _write(self.out / "reports" / "triage.json", {
            "warnings": report.warnings,
            "dropped": report.dropped,
            "failures": report.failures,
            "enrichment": report.enrichment,
            "store_warnings": self.store.warnings,
        })
        if report.failures:
            failed = sorted(report.failures)
            raise StageFailure("triage", failed, "; ".join(f"{k}: {report.failures[k]}" for k in failed))
        return [t.id for t in instances]

    def instances(self) -> list[EnrichedThreatInstance]:
        return _read_dir(self.out / "instances", enriched_from_dict, "triage")

    def assess(self) -> list[str]:
        analyzer = StaticAnalyzer(self.gateway)
        items = self.instances()
        failures: list[str] = []

        def run(t: EnrichedThreatInstance) -> Optional[StaticAssessment]:
            try:
                return analyzer.assess_static(t)
            except ThreatPrioError as exc:
                log.error("%s: assessment failed: %s", t.id, exc)
                failures.append(t.id)
                return None

        results = _pmap(run, items, self.cfg.max_workers)
        _clear(self.out / "assessments")
        for a in results:
            if a is not None:
                _write(self.out / "assessments" / f"{a.instance_id}.json", a)
        if failures:
            raise StageFailure("assess", sorted(failures))
        return [a.instance_id for a in results if a is not None]

    def assessments(self) -> dict[str, StaticAssessment]:
        return {a.instance_id: a for a in _read_dir(self.out / "assessments", assessment_from_dict, "assess")}

    def forecast(self) -> list[str]:
        forecaster = Forecaster(self.gateway)
        items = self.instances()
        scored = self.assessments()
        missing = sorted(t.id for t in items if t.id not in scored)
        if missing:
            raise StageFailure("forecast", missing, "no assessment on disk")
        window = history_window(self.cfg.as_of, self.cfg.window)

        def run(t: EnrichedThreatInstance) -> tuple[ExploitForecast, Any]:
            narrative = build_narrative(t, window, self.store)
            return forecaster.forecast(t, scored[t.id], narrative, self.cfg.horizon), narrative

        results = _pmap(run, items, self.cfg.max_workers)
        _clear(self.out / "forecasts")
        _clear(self.out / "narratives")
        for fc, narrative in results:
            _write(self.out / "forecasts" / f"{fc.instance_id}.json", fc)
            _write(self.out / "narratives" / f"{fc.instance_id}.json", narrative)
        return [fc.instance_id for fc, _ in results]

    def forecasts(self) -> dict[str, ExploitForecast]:
        return {f.instance_id: f for f in _read_dir(self.out / "forecasts", forecast_from_dict, "forecast")}

    def _constraints(self, t: EnrichedThreatInstance) -> PlanConstraints:
        base = self.cfg.constraints.get(t.id, PlanConstraints())
        if base.end_of_life or not t.metadata.cve_id:
            return base
        components = {c.casefold() for c in t.instance.affected_components}
        for adv in self.store.advisories_for(t.metadata.cve_id):
            if components & {e.casefold() for e in adv.end_of_life}:
                return PlanConstraints(base.depends_on, base.earliest_phase, True,
                                       (base.notes + " " if base.notes else "") + f"{adv.id} lists the component as end of life.")
        return base

    def mitigate(self) -> list[str]:
        planner = MitigationPlanner(self.store, self.gateway)
        items = self.instances()
        scored, forecasts = self.assessments(), self.forecasts()
        missing = sorted(t.id for t in items if t.id not in scored or t.id not in forecasts)
        if missing:
            raise StageFailure("mitigate", missing, "assessment or forecast missing on disk")
        if not items:
            raise StageFailure("mitigate", [], "no threat instances to plan for")

        def run(t: EnrichedThreatInstance) -> tuple[PlanInput, RetrievalReport]:
            report = RetrievalReport(t.id)
            try:
                actions = planner.retrieve_mitigations(t, report)
            except KnowledgeError as exc:
                raise StageFailure("mitigate", [t.id], str(exc)) from exc
            asset = self.cfg.asset_for(t)
            risk = RiskInputs(scored[t.id].base_score, forecasts[t.id].probability, asset.exposure, asset.criticality)
            target = f"{t.id} ({asset.label})" if asset.label else t.id
            return PlanInput(t.id, risk, tuple(actions), t.metadata.exploitation_status, self._constraints(t),
                             target, scored[t.id], forecasts[t.id]), report

        results = _pmap(run, items, self.cfg.max_workers)
        inputs = [r[0] for r in results]
        plan = planner.justify(prioritize(inputs, PhasePolicy(phase_days=self.cfg.phase_days)))
        _write(self.out / "plan.json", json.dumps(plan_document(plan), indent=2, ensure_ascii=False) + "\n")
        _write(self.out / "reports" / "plan_details.json", plan)
        _write(self.out / "reports" / "mitigation.json", {
            r.threat_id: {"dropped": r.dropped, "warnings": r.warnings} for _, r in results
        })
        return plan.order()

    def manifest(self) -> dict[str, Any]:
        files = {}
        for p in sorted(self.out.rglob("*.json")):
            rel = p.relative_to(self.out).as_posix()
            if rel != "manifest.json":
                files[rel] = hashlib.sha256(p.read_bytes()).hexdigest()
        doc = {
            "as_of": format_as_of(self.cfg.as_of),
            "backend": self.cfg.backend,
            "config_digest": self.cfg.digest(),
            "horizon_days": self.cfg.horizon,
            "window": window_label(parse_window(self.cfg.window)),
            "counts": {
                "instances": len(list((self.out / "instances").glob("*.json"))),
                "assessments": len(list((self.out / "assessments").glob("*.json"))),
                "forecasts": len(list((self.out / "forecasts").glob("*.json"))),
                "plans": int((self.out / "plan.json").exists()),
            },
            "files": files,
        }
        _write(self.out / "manifest.json", doc)
        return doc

    def run(self, stages: Sequence[str] = STAGES) -> dict[str, Any]:
        for stage in stages:
            log.info("stage %s", stage)
            getattr(self, stage)()
        return self.manifest()


def format_as_of(value: str) -> str:
    return to_jsonable(parse_timestamp(value))
