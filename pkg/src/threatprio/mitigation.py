"""Mitigation retrieval, canonicalization, risk scoring and phased planning.

Ordering is computed here, deterministically. The gateway contributes two
things only: candidate actions that must be grounded in retrieved documents,
and free-text justification notes layered onto an already fixed plan.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from typing import Any, Iterable, Optional, Sequence

from .errors import CyclicDependency, GatewayError
from .gateway import Gateway
from .knowledge import Advisory, KnowledgeStore
from .model import (
    ActionKind,
    Complexity,
    EnrichedThreatInstance,
    ExploitationStatus,
    ExploitForecast,
    MitigationAction,
    PatchMaturity,
    PlanEntry,
    PlanFlag,
    PrioritizedPlan,
    RiskInputs,
    StaticAssessment,
    canonical_key,
    to_jsonable,
)

log = logging.getLogger(__name__)

TIE_THRESHOLD = 0.1
# risks are compared at this many decimals so exact ties survive float rounding
RISK_DECIMALS = 9

KIND_RANK = {
    ActionKind.PATCH: 0,
    ActionKind.WORKAROUND: 1,
    ActionKind.MITIGATION_NOTE: 2,
    ActionKind.DETECTION: 2,
    ActionKind.VENDOR_ADVISORY: 2,
}
NO_ACTION_RANK = 3
MATURITY_RANK = {PatchMaturity.GA: 0, PatchMaturity.HOTFIX: 1, PatchMaturity.BETA: 2}
NO_PATCH_RANK = 3
COMPLEXITY_RANK = {Complexity.SIMPLE: 0, Complexity.MODERATE: 1, Complexity.COMPLEX: 2}
TIE_BREAK_LEVELS = (
    "(a) mitigation type",
    "(b) patch maturity",
    "(c) implementation complexity",
    "(d) exploitation velocity",
    "(e) business disruption",
)

ISOLATION = (
    "Isolate the affected system, apply compensating controls (network segmentation, "
    "disable the vulnerable feature, tighten monitoring) and plan an accelerated upgrade"
)


# -- retrieval ------------------------------------------------------------------

@dataclass
class RetrievalReport:
    threat_id: str
    dropped: list[dict[str, str]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def _from_advisory(adv: Advisory) -> list[MitigationAction]:
    out = []
    for r in adv.remediations:
        out.append(MitigationAction(
            kind=ActionKind(r.kind),
            title=r.title,
            vendor=adv.vendor,
            version_scope=r.version_scope,
            released=r.released,
            supersedes=r.supersedes,
            side_effects=r.side_effects,
            source=f"{adv.source}:{adv.id}",
            identifier=r.identifier,
            maturity=r.maturity,
            complexity=Complexity(r.complexity),
            disruption=r.disruption,
            reference=adv.url or adv.id,
        ))
    out.append(MitigationAction(
        kind=ActionKind.VENDOR_ADVISORY,
        title=f"Track advisory: {adv.title}",
        vendor=adv.vendor,
        released=adv.updated.date(),
        source=f"{adv.source}:{adv.id}",
        identifier=adv.id,
        complexity=Complexity.SIMPLE,
        disruption=0,
        reference=adv.url or adv.id,
    ))
    return out


def _documents(t: EnrichedThreatInstance, advisories: Sequence[Advisory], kev) -> list[dict[str, Any]]:
    docs = []
    for adv in advisories:
        docs.append({
            "ref": f"D{len(docs) + 1}",
            "source": adv.source,
            "id": adv.id,
            "title": adv.title,
            "text": adv.text,
            "remediations": [to_jsonable(r) for r in adv.remediations],
        })
    if kev is not None:
        docs.append({"ref": f"D{len(docs) + 1}", "source": "kev", "id": "CISA KEV", "title": kev.name,
                     "text": " ".join(x for x in (kev.required_action, kev.notes) if x), "remediations": []})
    for ctx in t.metadata.context_texts:
        if ctx.source == "nvd":
            docs.append({"ref": f"D{len(docs) + 1}", "source": "nvd", "id": ctx.reference, "title": "NVD description",
                         "text": ctx.text, "remediations": []})
    return docs


def _doc_text(doc: dict) -> str:
    parts = [doc["title"], doc["text"]]
    for r in doc["remediations"]:
        parts += [str(r.get("title", "")), str(r.get("identifier", "")), str(r.get("version_scope", ""))]
    return " ".join(p for p in parts if p).casefold()


class MitigationPlanner:
    def __init__(self, store: KnowledgeStore, gateway: Optional[Gateway] = None):
        self.store = store
        self.gateway = gateway

    def retrieve_mitigations(self, t: EnrichedThreatInstance,
                             report: Optional[RetrievalReport] = None) -> list[MitigationAction]:
        report = report if report is not None else RetrievalReport(t.id)
        cve = t.metadata.cve_id
        actions: list[MitigationAction] = []
        kev = None
        if cve:
            advisories = self.store.advisories_for(cve)
            kev = self.store.lookup_kev(cve)
        else:
            text = " ".join(x for _, _, x in t.text_fields())
            advisories = self.store.advisories_matching(text)
        for adv in advisories:
            actions.extend(_from_advisory(adv))
        if kev is not None and kev.required_action:
            actions.append(MitigationAction(
                kind=ActionKind.MITIGATION_NOTE, title=kev.required_action, vendor=kev.vendor_project,
                released=kev.date_added, source="kev", identifier=cve, complexity=Complexity.SIMPLE,
                reference="CISA KEV",
            ))
        catalog = self.store.attack
        for tech in t.metadata.attack_techniques:
            for m in catalog.mitigations_for(tech):
                actions.append(MitigationAction(
                    kind=ActionKind.MITIGATION_NOTE, title=f"{m.id} {m.name}", vendor="MITRE ATT&CK",
                    source=f"attack:{m.id}", identifier=m.id, reference=f"ATT&CK {tech}",
                ))
        if not cve:
            patches = [a for a in actions if a.kind is ActionKind.PATCH]
            for a in patches:
                report.warnings.append(f"{t.id}: patch {a.title!r} ignored; no CVE to map it to")
            actions = [a for a in actions if a.kind is not ActionKind.PATCH]
        if self.gateway is not None:
            actions.extend(self._gateway_proposals(t, advisories, kev, actions, report))
        return normalize_dedup(actions)

    def _gateway_proposals(self, t, advisories, kev, known: list[MitigationAction],
                           report: RetrievalReport) -> list[MitigationAction]:
        docs = _documents(t, advisories, kev)
        if not docs:
            return []
        try:
            doc = self.gateway.complete("mitigation-retrieve", {"THREAT": to_jsonable(t), "DOCUMENTS": docs}).document
        except GatewayError as exc:
            report.warnings.append(f"{t.id}: mitigation retrieval via gateway failed ({exc.__class__.__name__})")
            return []
        by_ref = {d["ref"]: d for d in docs}
        known_keys = {a.canonical_key: a for a in known}
        known_ids = {a.identifier.casefold() for a in known if a.identifier}
        kinds = {"patches": ActionKind.PATCH, "workarounds": ActionKind.WORKAROUND,
                 "mitigation_notes": ActionKind.MITIGATION_NOTE, "detections": ActionKind.DETECTION}
        accepted = []
        for bucket, kind in kinds.items():
            for item in doc.get(bucket, []):
                reason = self._ungrounded(item, kind, by_ref, known_keys, known_ids, t.metadata.cve_id)
                if reason:
                    log.warning("%s: dropped proposed %s %r (%s)", t.id, kind.value, item.get("title"), reason)
                    report.dropped.append({"threat": t.id, "kind": kind.value, "title": item.get("title", ""),
                                           "reason": reason})
                    continue
                cited = by_ref[item["source_ref"]]
                accepted.append(MitigationAction(
                    kind=kind,
                    title=item["title"],
                    vendor=item.get("vendor", ""),
                    version_scope=item.get("version_scope", ""),
                    released=item.get("released") or None,
                    side_effects=item.get("side_effects", ""),
                    source=f"{cited['source']}:{cited['id']}",
                    identifier=item.get("identifier", ""),
                    maturity=item.get("maturity"),
                    complexity=item.get("complexity", "moderate"),
                    reference=f"gateway via {cited['id']}",
                ))
        return accepted

    @staticmethod
    def _ungrounded(item, kind, by_ref, known_keys, known_ids, cve) -> str:
        cited = by_ref.get(item.get("source_ref", ""))
        if cited is None:
            return "cites no retrieved document"
        key = canonical_key(item["title"], item.get("vendor", ""), item.get("version_scope", ""))
        if key in known_keys:
            return ""
        ident = (item.get("identifier") or "").strip().casefold()
        if kind is ActionKind.PATCH:
            if not cve:
                return "patch proposed for a threat without a CVE"
            if ident and ident in known_ids and ident in _doc_text(cited):
                return ""
            return "patch absent from every retrieved source"
        text = _doc_text(cited)
        if item["title"].strip().casefold() in text or (ident and ident in text):
            return ""
        return "not supported by the cited document"

    # -- planning ---------------------------------------------------------------

    def justify(self, plan: PrioritizedPlan) -> PrioritizedPlan:
        """Append gateway-written justification notes; the order is never touched."""
        if self.gateway is None or not plan.entries:
            return plan
        summary = [{"target": e.target, "risk": round(e.risk, 6), "phase": e.phase,
                    "recommended_action": recommended_title(e), "tie_breaker": e.tie_breaker,
                    "justification": e.justification} for e in plan.entries]
        try:
            doc = self.gateway.complete("mitigation-prioritize", {"PLAN": summary}).document
        except GatewayError as exc:
            log.warning("plan justification via gateway failed: %s", exc)
            return plan
        notes = {}
        for item in doc.get("justifications", []):
            notes.setdefault(item["target"], item["note"].strip())
        entries = []
        for e in plan.entries:
            note = notes.get(e.target)
            entries.append(dataclasses.replace(e, justification=f"{e.justification} {note}") if note else e)
        unknown = sorted(set(notes) - {e.target for e in plan.entries})
        if unknown:
            log.warning("justification notes for unknown targets ignored: %s", ", ".join(unknown))
        return PrioritizedPlan(tuple(entries), plan.flags)


# -- canonicalization -------------------------------------------------------------

def _fill(winner: MitigationAction, others: Iterable[MitigationAction]) -> MitigationAction:
    updates = {}
    for name in ("released", "identifier", "maturity", "side_effects", "supersedes", "reference"):
        if getattr(winner, name) in (None, ""):
            for other in others:
                value = getattr(other, name)
                if value not in (None, ""):
                    updates[name] = value
                    break
    return dataclasses.replace(winner, **updates) if updates else winner


def _action_order(a: MitigationAction) -> tuple:
    return (KIND_RANK[a.kind], a.authority, a.title.casefold(), a.canonical_key, a.source)


def normalize_dedup(actions: Iterable[MitigationAction]) -> list[MitigationAction]:
    """Merge actions sharing a canonical key and annotate supersession chains."""
    groups: dict[str, list[MitigationAction]] = {}
    for a in actions:
        groups.setdefault(a.canonical_key, []).append(a)
    merged = []
    for key in sorted(groups):
        ranked = sorted(groups[key], key=lambda a: (a.authority, a.source, -(a.released.toordinal() if a.released else 0)))
        merged.append(_fill(ranked[0], ranked[1:]))

    by_ident = {}
    for a in merged:
        if a.identifier:
            by_ident.setdefault(a.identifier.casefold(), a.canonical_key)
    keys = {a.canonical_key for a in merged}
    resolved = []
    for a in merged:
        target = a.supersedes
        if target and target not in keys:
            target = by_ident.get(target.casefold(), target)
        resolved.append(dataclasses.replace(a, supersedes=target) if target != a.supersedes else a)

    superseder: dict[str, str] = {}
    for a in sorted(resolved, key=lambda a: (a.released.toordinal() if a.released else 0, a.canonical_key)):
        if a.supersedes and a.supersedes in keys and a.supersedes != a.canonical_key:
            superseder[a.supersedes] = a.canonical_key
    out = [dataclasses.replace(a, superseded_by=superseder.get(a.canonical_key, a.superseded_by)) for a in resolved]
    return sorted(out, key=_action_order)


# -- risk and ordering ------------------------------------------------------------

def risk_score(inputs: RiskInputs) -> float:
    return inputs.severity * inputs.exploit_prob * inputs.exposure_factor * inputs.criticality_factor


@dataclass(frozen=True)
class PlanConstraints:
    depends_on: tuple[str, ...] = ()
    earliest_phase: int = 1
    end_of_life: bool = False
    notes: str = ""


@dataclass(frozen=True)
class PlanInput:
    threat_id: str
    risk_inputs: RiskInputs
    actions: tuple[MitigationAction, ...] = ()
    exploitation: ExploitationStatus = ExploitationStatus.UNKNOWN
    constraints: PlanConstraints = PlanConstraints()
    target: str = ""
    assessment: Optional[StaticAssessment] = None
    forecast: Optional[ExploitForecast] = None

    @property
    def risk(self) -> float:
        return risk_score(self.risk_inputs)


@dataclass(frozen=True)
class PhasePolicy:
    phase_days: int = 7
    urgent_risk: float = 4.0
    elevated_risk: float = 1.0


def active_actions(actions: Iterable[MitigationAction]) -> list[MitigationAction]:
    return [a for a in actions if not a.superseded_by]


def recommended_action(item: PlanInput) -> Optional[MitigationAction]:
    live = active_actions(item.actions)
    if item.constraints.end_of_life:
        live = [a for a in live if a.kind is not ActionKind.PATCH]
    if not live:
        return None
    return min(live, key=lambda a: (
        KIND_RANK[a.kind],
        MATURITY_RANK.get(a.maturity, NO_PATCH_RANK),
        COMPLEXITY_RANK[a.complexity],
        a.disruption,
        a.authority,
        a.title.casefold(),
    ))


def velocity_rank(status: ExploitationStatus) -> int:
    if status is ExploitationStatus.CONFIRMED_IN_WILD:
        return 0
    if status is ExploitationStatus.POC_PUBLIC:
        return 1
    return 2


def tie_break_key(item: PlanInput) -> tuple[int, int, int, int, int]:
    """(a)..(e) of the tie-break chain; smaller sorts first."""
    best = recommended_action(item)
    patches = [a for a in active_actions(item.actions) if a.kind is ActionKind.PATCH and not item.constraints.end_of_life]
    maturity = min((MATURITY_RANK.get(a.maturity, NO_PATCH_RANK) for a in patches), default=NO_PATCH_RANK)
    return (
        KIND_RANK[best.kind] if best else NO_ACTION_RANK,
        maturity,
        COMPLEXITY_RANK[best.complexity] if best else COMPLEXITY_RANK[Complexity.COMPLEX],
        velocity_rank(item.exploitation),
        best.disruption if best else 99,
    )


def ordering_risk(risk: float) -> float:
    """Risk as compared for ordering: products equal up to float noise compare equal."""
    return round(risk, RISK_DECIMALS)


def tie_clusters(risks: Sequence[float], threshold: float = TIE_THRESHOLD) -> list[list[int]]:
    """Indices grouped into chains of near-ties, highest risk first.

    Consecutive (sorted) risks closer than ``threshold`` share a cluster, which
    makes the tie relation transitive.
    """
    order = sorted(range(len(risks)), key=lambda i: -risks[i])
    clusters: list[list[int]] = []
    for i in order:
        if clusters and risks[clusters[-1][-1]] - risks[i] < threshold:
            clusters[-1].append(i)
        else:
            clusters.append([i])
    return clusters


def rank_order(items: Sequence[PlanInput], threshold: float = TIE_THRESHOLD) -> list[int]:
    risks = [ordering_risk(it.risk) for it in items]
    out = []
    for cluster in tie_clusters(risks, threshold):
        out.extend(sorted(cluster, key=lambda i: (tie_break_key(items[i]), -risks[i], items[i].threat_id)))
    return out


def _decisive(a: PlanInput, b: PlanInput) -> str:
    ka, kb = tie_break_key(a), tie_break_key(b)
    for level, x, y in zip(TIE_BREAK_LEVELS, ka, kb):
        if x != y:
            return level
    return "risk value" if ordering_risk(a.risk) != ordering_risk(b.risk) else "threat id"


def _phases(items: Sequence[PlanInput], policy: PhasePolicy) -> tuple[dict[str, int], list[str]]:
    ids = {it.threat_id for it in items}
    notes = []
    graph = {}
    for it in items:
        deps = []
        for d in it.constraints.depends_on:
            if d in ids:
                deps.append(d)
            else:
                notes.append(f"{it.threat_id}: dependency {d} is not in the plan; ignored")
        graph[it.threat_id] = deps
    try:
        order = list(TopologicalSorter(graph).static_order())
    except CycleError as exc:
        raise CyclicDependency(list(exc.args[1])) from exc
    by_id = {it.threat_id: it for it in items}
    phase: dict[str, int] = {}
    for tid in order:
        it = by_id[tid]
        risk = it.risk
        if risk >= policy.urgent_risk or it.exploitation is ExploitationStatus.CONFIRMED_IN_WILD:
            base = 1
        elif risk >= policy.elevated_risk:
            base = 2
        else:
            base = 3
        base = max(base, it.constraints.earliest_phase)
        phase[tid] = max([base] + [phase[d] + 1 for d in graph[tid]])
    return phase, notes


def recommended_title(entry: PlanEntry) -> str:
    live = active_actions(entry.actions)
    return live[0].title if live else ISOLATION


def prioritize(items: Sequence[PlanInput], policy: PhasePolicy = PhasePolicy(),
               threshold: float = TIE_THRESHOLD) -> PrioritizedPlan:
    if not items:
        raise ValueError("prioritize needs at least one entry")
    if len({it.threat_id for it in items}) != len(items):
        raise ValueError("threat ids in a plan must be unique")
    order = rank_order(items, threshold)
    phases, dep_notes = _phases(items, policy)
    clusters = {i: n for n, c in enumerate(tie_clusters([ordering_risk(it.risk) for it in items], threshold)) for i in c}

    entries, flags = [], []
    for pos, idx in enumerate(order):
        it = items[idx]
        ri = it.risk_inputs
        best = recommended_action(it)
        has_patch = any(a.kind is ActionKind.PATCH for a in active_actions(it.actions))
        tie = None
        mates = [j for j in order if clusters[j] == clusters[idx] and j != idx]
        if mates:
            neighbour = order[pos + 1] if pos + 1 < len(order) and clusters[order[pos + 1]] == clusters[idx] \
                else order[pos - 1]
            tie = _decisive(it, items[neighbour])
        why = (f"Risk {it.risk:.4f} = severity {ri.severity:.1f} x exploit probability {ri.exploit_prob:.4f}"
               f" x exposure {ri.exposure_factor:g} x criticality {ri.criticality_factor:g}.")
        if tie:
            why += f" Within {TIE_THRESHOLD:g} of another threat; ordered by tie-breaker {tie}."
        notes = []
        if it.constraints.notes:
            notes.append(it.constraints.notes)
        superseded = [a for a in it.actions if a.superseded_by]
        for a in superseded:
            repl = next((b.title for b in it.actions if b.canonical_key == a.superseded_by), a.superseded_by)
            notes.append(f"{a.title} is superseded by {repl}.")
        if best is not None and best.side_effects:
            notes.append(f"Side effects: {best.side_effects}")
        notes += [n for n in dep_notes if n.startswith(f"{it.threat_id}:")]
        actions = tuple(sorted(it.actions, key=lambda a: (a is not best, bool(a.superseded_by), _action_order(a))))
        if it.constraints.end_of_life or not has_patch:
            reason = "end-of-life or unsupported system" if it.constraints.end_of_life else "no vendor patch available"
            flags.append(PlanFlag(it.threat_id, reason, ISOLATION))
            notes.append(f"Flagged ({reason}): {ISOLATION}.")
        entries.append(PlanEntry(
            threat_id=it.threat_id,
            risk=it.risk,
            actions=actions if best is not None else (),
            phase=phases[it.threat_id],
            dependencies=tuple(sorted(d for d in it.constraints.depends_on if d in phases)),
            justification=why,
            target=it.target or it.threat_id,
            eta=f"P{phases[it.threat_id] * policy.phase_days}D",
            operational_notes=" ".join(notes),
            tie_breaker=tie,
        ))
    return PrioritizedPlan(tuple(entries), tuple(flags))


def plan_document(plan: PrioritizedPlan) -> list[dict[str, Any]]:
    """The plan as the external JSON array contract."""
    by_id = {e.threat_id: e for e in plan.entries}
    out = []
    for e in plan.entries:
        out.append({
            "target": e.target,
            "recommended_action": recommended_title(e),
            "ETA": e.eta,
            "justification": e.justification,
            "dependencies": [by_id[d].target for d in e.dependencies],
            "operational_notes": e.operational_notes,
        })
    return out
