"""CVSS v3.1 base-vector assessment: evidence -> per-source classification -> rule-based merge.

The model only ever chooses categorical metric values from cited evidence.
The numeric score always comes from :func:`threatprio.cvss.base_score`.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import Iterable, Optional, Sequence

from .cvss import base_score, severity_rating
from .errors import GatewayError
from .gateway import Gateway
from .lexicon import LEXICON, cue_for_span, find_cues
from .model import (
    AttackComplexity,
    AttackVector,
    CvssVector,
    EnrichedThreatInstance,
    EvidenceSpan,
    Impact,
    Metric,
    MetricDecision,
    PrivilegesRequired,
    Scope,
    StaticAssessment,
    UserInteraction,
    parse_cvss_vector,
)

log = logging.getLogger(__name__)

# Least severe assignment per metric, so that missing evidence never raises priority.
DEFAULTS: dict[Metric, Enum] = {
    Metric.AV: AttackVector.LOCAL,
    Metric.AC: AttackComplexity.HIGH,
    Metric.PR: PrivilegesRequired.HIGH,
    Metric.UI: UserInteraction.REQUIRED,
    Metric.S: Scope.UNCHANGED,
    Metric.C: Impact.NONE,
    Metric.I: Impact.NONE,
    Metric.A: Impact.NONE,
}

TEMPLATE_FOR = {
    Metric.AV: "metric-classify-av",
    Metric.AC: "metric-classify-ac",
    Metric.PR: "metric-classify-pr",
    Metric.UI: "metric-classify-ui",
    Metric.C: "metric-classify-cia",
    Metric.I: "metric-classify-cia",
    Metric.A: "metric-classify-cia",
}

METRIC_NAMES = {
    Metric.AV: "Attack Vector", Metric.AC: "Attack Complexity", Metric.PR: "Privileges Required",
    Metric.UI: "User Interaction", Metric.S: "Scope", Metric.C: "Confidentiality",
    Metric.I: "Integrity", Metric.A: "Availability",
}

EXPOSURE = [AttackVector.PHYSICAL, AttackVector.LOCAL, AttackVector.ADJACENT, AttackVector.NETWORK]
PRIVILEGE = [PrivilegesRequired.NONE, PrivilegesRequired.LOW, PrivilegesRequired.HIGH]


# -- evidence -----------------------------------------------------------------

def build_evidence_set(t: EnrichedThreatInstance, metric: Metric) -> list[EvidenceSpan]:
    """Cue-lexicon spans for one metric, verbatim from the instance or its metadata texts."""
    metric = Metric(metric)
    out: list[EvidenceSpan] = []
    seen: set[tuple[str, str]] = set()
    for locator, source, text in t.text_fields():
        for hit in find_cues(metric, text):
            key = (hit.text.casefold(), source)
            if key in seen:
                continue
            seen.add(key)
            out.append(EvidenceSpan(hit.text, source, f"{locator}:{hit.start}-{hit.end}"))
    return out


def _vote(metric: Metric, span: str) -> tuple[Optional[Enum], bool]:
    hit = cue_for_span(metric, span)
    if hit is None:
        return None, False
    return hit.value, hit.cue.necessary


# -- merge rules ----------------------------------------------------------------

def rule_value(metric: Metric, votes: Sequence[tuple[Enum, bool, str]]) -> Enum:
    """Apply the per-metric merge rule to (value, necessity, source) votes."""
    metric = Metric(metric)
    values = [v for v, _, _ in votes]
    if not values:
        return DEFAULTS[metric]
    if metric is Metric.AV:
        return max(values, key=EXPOSURE.index)
    if metric is Metric.AC:
        high = AttackComplexity.HIGH
        if all(v is high for v in values) or any(v is high and nec for v, nec, _ in votes):
            return high
        return AttackComplexity.LOW
    if metric is Metric.PR:
        return min(values, key=PRIVILEGE.index)
    if metric is Metric.UI:
        req = UserInteraction.REQUIRED
        if all(v is req for v in values) or any(v is req and nec for v, nec, _ in votes):
            return req
        return UserInteraction.NONE
    if metric is Metric.S:
        return Scope.CHANGED if Scope.CHANGED in values else Scope.UNCHANGED
    high_sources = {src for v, _, src in votes if v is Impact.HIGH}
    if all(v is Impact.HIGH for v in values) or len(high_sources) >= 2:
        return Impact.HIGH
    if any(v in (Impact.HIGH, Impact.LOW) for v in values):
        return Impact.LOW
    return Impact.NONE


def _rule_text(metric: Metric) -> str:
    return {
        Metric.AV: "highest exposure explicitly supported",
        Metric.AC: "High only when the complicating condition is necessary",
        Metric.PR: "minimum privileges the attacker must hold",
        Metric.UI: "Required only when user action is a necessary condition",
        Metric.S: "Changed when a security-boundary crossing is stated",
    }.get(metric, "High only on consensus or two agreeing sources, otherwise Low")


def _candidate_source(d: MetricDecision) -> str:
    return "+".join(sorted({e.source for e in d.evidence})) or "default"


def _candidate_necessary(d: MetricDecision) -> bool:
    for ev in d.evidence:
        value, necessary = _vote(d.metric, ev.span)
        if necessary and value is d.value:
            return True
    return False


def _merge_evidence(decisions: Iterable[MetricDecision]) -> tuple[EvidenceSpan, ...]:
    merged = {(e.span, e.source, e.locator or ""): e for d in decisions for e in d.evidence}
    return tuple(merged[k] for k in sorted(merged))


def resolve_conflicts(candidates: Sequence[MetricDecision], metric: Metric) -> MetricDecision:
    """Merge per-source decisions for one metric; independent of candidate order."""
    metric = Metric(metric)
    if not candidates:
        raise ValueError("resolve_conflicts needs at least one candidate")
    if len(candidates) == 1:
        return candidates[0]
    ordered = sorted(candidates, key=lambda d: (_candidate_source(d), d.value.value, d.confidence, d.rationale))
    live = [d for d in ordered if not d.defaulted]
    evidence = _merge_evidence(ordered)
    if not live:
        return MetricDecision(metric, DEFAULTS[metric], evidence,
                              f"all {len(ordered)} candidates fell back to the default rule", 0.0, defaulted=True)
    votes = [(d.value, _candidate_necessary(d), _candidate_source(d)) for d in live]
    chosen = rule_value(metric, votes)
    winners = [d for d in live if d.value is chosen]
    losers = [d for d in live if d.value is not chosen]
    confidence = max((d.confidence for d in winners), default=min(d.confidence for d in live))
    parts = [f"{metric.value}={chosen.value} by rule: {_rule_text(metric)}."]
    for d in winners:
        parts.append(f"Kept {d.value.value} from {_candidate_source(d)}.")
    for d in losers:
        cited = "; ".join(f'"{e.span}"' for e in d.evidence[:2])
        parts.append(f"Discarded {d.value.value} from {_candidate_source(d)} ({cited}).")
    if len(live) < len(ordered):
        parts.append(f"{len(ordered) - len(live)} defaulted candidate(s) ignored.")
    if not winners:
        # the rule picked a value no single candidate proposed (e.g. impact downgraded to Low)
        confidence = min(d.confidence for d in live)
    return MetricDecision(metric, chosen, evidence, " ".join(parts), confidence, defaulted=False)


# -- classification -------------------------------------------------------------

def threat_summary(t: EnrichedThreatInstance) -> str:
    inst = t.instance
    parts = [inst.vendor or "unknown vendor"]
    if inst.affected_components:
        parts.append("components: " + ", ".join(inst.affected_components))
    if inst.impact:
        parts.append("impact: " + inst.impact)
    if inst.attack_patterns:
        parts.append("attack patterns: " + "; ".join(inst.attack_patterns))
    return "; ".join(parts)


def format_evidence(evidence: Sequence[EvidenceSpan]) -> str:
    return "\n".join(f"- {e.span} | {e.source}" for e in evidence)


def default_decision(metric: Metric, evidence: Sequence[EvidenceSpan] = (), reason: str = "") -> MetricDecision:
    metric = Metric(metric)
    why = reason or "no evidence located"
    return MetricDecision(metric, DEFAULTS[metric], tuple(evidence),
                          f"{why}; default rule assigns {DEFAULTS[metric].value} (flagged for review)",
                          0.0, defaulted=True)


class StaticAnalyzer:
    def __init__(self, gateway: Optional[Gateway] = None, max_workers: int = 1):
        self.gateway = gateway
        self.max_workers = max(1, max_workers)

    def classify_metric(self, evidence: Sequence[EvidenceSpan], metric: Metric,
                        t: EnrichedThreatInstance) -> MetricDecision:
        metric = Metric(metric)
        evidence = tuple(evidence)
        if not evidence:
            return default_decision(metric)
        if metric is Metric.S or self.gateway is None:
            return self._classify_by_lexicon(evidence, metric)
        bindings = {"THREAT_SUMMARY": threat_summary(t), "EVIDENCE": format_evidence(evidence)}
        if metric in (Metric.C, Metric.I, Metric.A):
            bindings["METRIC"] = f"{METRIC_NAMES[metric]} ({metric.value})"
        try:
            result = self.gateway.complete(TEMPLATE_FOR[metric], bindings)
        except GatewayError as exc:
            log.warning("%s %s classification failed: %s", t.id, metric.value, exc)
            return default_decision(metric, evidence, f"gateway failure ({exc.__class__.__name__})")
        doc = result.document
        value = metric.coerce(doc["value"])
        by_text = {e.span.casefold(): e for e in evidence}
        cited = []
        for span in doc.get("cited_spans", []):
            match = by_text.get(str(span).strip().casefold())
            if match is None:
                log.warning("%s %s: model cited a span outside the evidence set: %r", t.id, metric.value, span)
            elif match not in cited:
                cited.append(match)
        kept = tuple(cited) or evidence
        rationale = doc.get("rationale", "").strip()
        if not any(e.span.casefold() in rationale.casefold() for e in kept):
            rationale = (rationale + " " if rationale else "") + "Evidence: " + "; ".join(f'"{e.span}"' for e in kept)
        return MetricDecision(metric, value, kept, rationale, float(doc["confidence"]))

    @staticmethod
    def _classify_by_lexicon(evidence: Sequence[EvidenceSpan], metric: Metric) -> MetricDecision:
        votes = []
        for e in evidence:
            value, necessary = _vote(metric, e.span)
            if value is not None:
                votes.append((value, necessary, e.source))
        if not votes:
            return default_decision(metric, evidence, "no evidence span maps to a metric value")
        value = rule_value(metric, votes)
        cited = tuple(e for e in evidence if _vote(metric, e.span)[0] is value) or tuple(evidence)
        agree = sum(1 for v, _, _ in votes if v is value) / len(votes)
        spans = "; ".join(f'"{e.span}"' for e in cited)
        return MetricDecision(metric, value, cited, f"{metric.value}={value.value} from cue lexicon: {spans}",
                              round(agree, 4))

    def decide(self, t: EnrichedThreatInstance, metric: Metric) -> MetricDecision:
        """Evidence -> one classification per source -> conflict resolution."""
        evidence = build_evidence_set(t, metric)
        if not evidence:
            return default_decision(metric)
        groups: dict[str, list[EvidenceSpan]] = defaultdict(list)
        for e in evidence:
            groups[e.source].append(e)
        candidates = [self.classify_metric(groups[src], metric, t) for src in sorted(groups)]
        return resolve_conflicts(candidates, metric)

    def assess_static(self, t: EnrichedThreatInstance) -> StaticAssessment:
        metrics = list(LEXICON)
        if self.max_workers > 1:
            with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
                decisions = list(pool.map(lambda m: self.decide(t, m), metrics))
        else:
            decisions = [self.decide(t, m) for m in metrics]
        by_metric = {d.metric: d for d in decisions}
        vector = CvssVector.from_mapping({m: by_metric[m].value for m in by_metric})
        scores = base_score(vector)
        return StaticAssessment(
            instance_id=t.id,
            vector=vector,
            base_score=scores.base,
            rating=severity_rating(scores.base),
            per_metric_decisions=tuple(by_metric[m] for m in sorted(by_metric, key=list(Metric).index)),
            impact_subscore=round(scores.impact, 4),
            exploitability_subscore=round(scores.exploitability, 4),
        )


def assess_static(t: EnrichedThreatInstance, gateway: Optional[Gateway] = None) -> StaticAssessment:
    return StaticAnalyzer(gateway).assess_static(t)


def lexicon_analyst_answer(metric: Metric, evidence_lines: Sequence[tuple[str, str]]) -> dict:
    """Deterministic classifier answer for one evidence group; used to author gateway fixtures."""
    evidence = [EvidenceSpan(span, src) for span, src in evidence_lines]
    decision = StaticAnalyzer._classify_by_lexicon(evidence, metric)
    return {
        "value": decision.value.value,
        "confidence": decision.confidence,
        "rationale": decision.rationale,
        "cited_spans": [e.span for e in decision.evidence],
    }


def assessment_from_vector(instance_id: str, vector: str | CvssVector) -> StaticAssessment:
    """Assessment carrying a known vector (NVD-scored records, evaluation fixtures)."""
    v = vector if isinstance(vector, CvssVector) else parse_cvss_vector(vector)
    scores = base_score(v)
    decisions = tuple(
        MetricDecision(m, v.get(m), (EvidenceSpan(f"{m.value}:{v.get(m).value}", "vector"),),
                       rationale="value taken from the supplied vector", confidence=1.0)
        for m in Metric)
    return StaticAssessment(instance_id, v, scores.base, severity_rating(scores.base), decisions,
                            round(scores.impact, 4), round(scores.exploitability, 4))
