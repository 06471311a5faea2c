"""Stage-level evaluation against labeled fixtures."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from ..cvss import severity_rating
from ..model import (
    EnrichedThreatInstance,
    Metadata,
    Metric,
    PrioritizedPlan,
    StaticAssessment,
    ThreatInstance,
    parse_cvss_vector,
)
from ..static_analysis import StaticAnalyzer
from .metrics import canonical_item, f1_set, kendall_tau, ndcg_at_k, rmse


@dataclass(frozen=True)
class NvdCase:
    cve_id: str
    vector: str
    score: float
    description: str


def load_nvd_cases(path: Optional[Path] = None) -> list[NvdCase]:
    if path is None:
        text = resources.files("threatprio").joinpath("data/eval/nvd_cvss.jsonl").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return [NvdCase(**json.loads(line)) for line in text.splitlines() if line.strip()]


def nvd_instance(case: NvdCase) -> EnrichedThreatInstance:
    """The description alone; the official vector and the CVE id stay out of the input."""
    inst = ThreatInstance(id=case.cve_id, parent_incident=case.cve_id, description=case.description, source="nvd")
    return EnrichedThreatInstance(inst, Metadata())


@dataclass
class StaticEval:
    accuracy: dict[Metric, float]
    base_rmse: float
    vector_exact: float
    rating_accuracy: float
    cases: int
    rows: list[dict] = field(default_factory=list)


def evaluate_static(cases: Sequence[NvdCase], analyzer: Optional[StaticAnalyzer] = None) -> StaticEval:
    analyzer = analyzer or StaticAnalyzer()
    hits = {m: 0 for m in Metric}
    preds, refs, exact, rating_hits, rows = [], [], 0, 0, []
    for case in cases:
        got: StaticAssessment = analyzer.assess_static(nvd_instance(case))
        ref = parse_cvss_vector(case.vector)
        for m in Metric:
            hits[m] += got.vector.get(m) is ref.get(m)
        exact += str(got.vector) == str(ref)
        rating_hits += got.rating is severity_rating(case.score)
        preds.append(got.base_score)
        refs.append(case.score)
        rows.append({"cve_id": case.cve_id, "reference": case.vector, "assessed": str(got.vector),
                     "reference_score": case.score, "assessed_score": got.base_score})
    n = len(cases)
    return StaticEval({m: hits[m] / n for m in Metric}, rmse(preds, refs), exact / n, rating_hits / n, n, rows)


def _instance_items(t: EnrichedThreatInstance) -> dict[str, set[str]]:
    return {
        "cve": {canonical_item(c) for c in t.instance.cve_ids},
        "vendor": {canonical_item(t.instance.vendor)} if t.instance.vendor else set(),
        "components": {canonical_item(c) for c in t.instance.affected_components},
        "techniques": {canonical_item(x) for x in t.metadata.attack_techniques},
    }


def evaluate_triage(predicted: Iterable[EnrichedThreatInstance],
                    gold: Mapping[str, Sequence[Mapping[str, Sequence[str]]]]) -> dict[str, float]:
    """Mean per-incident F1 for each extracted field, plus instance-count agreement.

    ``gold`` maps an incident id to its expected instances, each a mapping of
    field name (cve, vendor, components, techniques) to items.
    """
    by_incident: dict[str, list[EnrichedThreatInstance]] = {}
    for t in predicted:
        by_incident.setdefault(t.instance.parent_incident, []).append(t)
    fields_ = ("cve", "vendor", "components", "techniques")
    totals = {f: 0.0 for f in fields_}
    count_hits = 0
    for incident, expected in gold.items():
        got = by_incident.get(incident, [])
        count_hits += len(got) == len(expected)
        for f in fields_:
            pred_items = set().union(*(_instance_items(t)[f] for t in got)) if got else set()
            ref_items = {canonical_item(x) for inst in expected for x in inst.get(f, ())}
            totals[f] += f1_set(pred_items, ref_items)
    n = max(len(gold), 1)
    out = {f"f1_{f}": totals[f] / n for f in fields_}
    out["instance_count_accuracy"] = count_hits / n
    return out


def evaluate_plan(plan: PrioritizedPlan, reference_order: Sequence[str], relevance: Mapping[str, float],
                  reference_actions: Optional[Mapping[str, Sequence[str]]] = None, k: int = 5) -> dict[str, float]:
    order = plan.order()
    out = {f"ndcg@{k}": ndcg_at_k(order, relevance, k), "kendall_tau": kendall_tau(order, list(reference_order))}
    if reference_actions:
        scores = []
        for e in plan.entries:
            ref = {canonical_item(x) for x in reference_actions.get(e.threat_id, ())}
            pred = {canonical_item(a.title) for a in e.actions if not a.superseded_by}
            scores.append(f1_set(pred, ref))
        out["f1_actions"] = sum(scores) / len(scores) if scores else 1.0
    return out
