"""Static assessment: evidence spans, classification, merge rules, defaults and score provenance."""

from __future__ import annotations

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from threatprio.cvss import base_score
from threatprio.evaluation import evaluate_static, load_nvd_cases
from threatprio.gateway import Gateway, ScriptedBackend
from threatprio.model import (
    AttackComplexity,
    AttackVector,
    EnrichedThreatInstance,
    EvidenceSpan,
    Impact,
    Metadata,
    Metric,
    MetricDecision,
    SourcedText,
    ThreatInstance,
    UserInteraction,
    parse_cvss_vector,
)
from threatprio.static_analysis import (
    DEFAULTS,
    StaticAnalyzer,
    assess_static,
    build_evidence_set,
    resolve_conflicts,
)

SPOOLER = ("An authenticated remote attacker can send a crafted DCERPC request to the Windows Print Spooler "
           "service and execute arbitrary code with SYSTEM privileges.")
OFFICE = ("Microsoft Office Equation Editor memory corruption: the victim must open a malicious RTF document, "
          "after which an attacker can run arbitrary code in the context of the current user.")
MOST_SEVERE = {"metric-classify-av": "Network", "metric-classify-ac": "Low", "metric-classify-pr": "None",
               "metric-classify-ui": "None", "metric-classify-cia": "High"}


def inst(description: str, contexts: tuple[SourcedText, ...] = ()) -> EnrichedThreatInstance:
    t = ThreatInstance(id="INC-1-1", parent_incident="INC-1", vendor="Microsoft", description=description)
    return EnrichedThreatInstance(t, Metadata(context_texts=contexts))


def decision(metric, value, span, source, necessary_text=None, confidence=0.8):
    return MetricDecision(metric, value, (EvidenceSpan(necessary_text or span, source),), f'cites "{span}"', confidence)


# -- evidence ------------------------------------------------------------------------------------

def test_print_spooler_attack_vector_spans():
    spans = {e.span for e in build_evidence_set(inst(SPOOLER), Metric.AV)}
    assert "authenticated remote attacker" in spans
    assert any("crafted DCERPC request" in s for s in spans)


def test_no_auth_language_gives_empty_privilege_evidence():
    assert build_evidence_set(inst("The spooler service crashes when a print job is queued."), Metric.PR) == []


def test_office_user_interaction_span():
    spans = {e.span for e in build_evidence_set(inst(OFFICE), Metric.UI)}
    assert "victim must open a malicious RTF document" in spans


def test_spans_are_verbatim_and_located():
    t = inst(SPOOLER, (SourcedText("nvd", "A remote attacker could take over the server."),))
    texts = {loc: text for loc, _, text in t.text_fields()}
    for m in Metric:
        for e in build_evidence_set(t, m):
            field, offsets = e.locator.rsplit(":", 1)
            start, end = map(int, offsets.split("-"))
            assert texts[field][start:end] == e.span
    sources = {e.source for e in build_evidence_set(t, Metric.AV)}
    assert sources == {"incident", "nvd"}


# -- classification and merge rules ------------------------------------------------------------------

def test_print_spooler_lexicon_classification():
    a = assess_static(inst(SPOOLER))
    v = a.vector
    assert v.av is AttackVector.NETWORK and v.ac is AttackComplexity.LOW
    assert v.c is v.i is v.a is Impact.HIGH


def test_office_requires_user_interaction():
    assert assess_static(inst(OFFICE)).vector.ui is UserInteraction.REQUIRED


def test_attack_vector_highest_supported_exposure():
    local = decision(Metric.AV, AttackVector.LOCAL, "local user", "blog")
    network = decision(Metric.AV, AttackVector.NETWORK, "remote attacker", "vendor")
    merged = resolve_conflicts([local, network], Metric.AV)
    assert merged.value is AttackVector.NETWORK
    assert "Discarded Local" in merged.rationale


def test_attack_complexity_unnecessary_condition_stays_low():
    low = decision(Metric.AC, AttackComplexity.LOW, "no special configuration", "vendor")
    high = decision(Metric.AC, AttackComplexity.HIGH, "if Point and Print is misconfigured", "blog")
    assert resolve_conflicts([low, high], Metric.AC).value is AttackComplexity.LOW


def test_single_candidate_is_identity():
    d = decision(Metric.PR, DEFAULTS[Metric.PR], "administrator", "vendor")
    assert resolve_conflicts([d], Metric.PR) is d


def test_impact_downgrades_without_consensus():
    high = decision(Metric.C, Impact.HIGH, "read arbitrary files", "blog")
    none = decision(Metric.C, Impact.NONE, "no data exposure", "vendor")
    assert resolve_conflicts([high, none], Metric.C).value is Impact.LOW
    corroborated = decision(Metric.C, Impact.HIGH, "full disclosure", "nvd")
    assert resolve_conflicts([high, none, corroborated], Metric.C).value is Impact.HIGH


def test_resolve_needs_a_candidate():
    with pytest.raises(ValueError):
        resolve_conflicts([], Metric.AV)


_VALUES = {m: list(m.domain) for m in Metric}


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_conflict_resolution_is_order_independent(data):
    metric = data.draw(st.sampled_from(list(Metric)))
    n = data.draw(st.integers(2, 5))
    cands = [
        MetricDecision(metric, data.draw(st.sampled_from(_VALUES[metric])),
                       (EvidenceSpan(f"span {i}", data.draw(st.sampled_from(["nvd", "vendor", "blog"]))),),
                       f"r{i}", data.draw(st.sampled_from([0.3, 0.6, 0.9])))
        for i in range(n)
    ]
    first = resolve_conflicts(cands, metric)
    for perm in itertools.islice(itertools.permutations(cands), 24):
        assert resolve_conflicts(list(perm), metric) == first


# -- defaults and gateway fallback ---------------------------------------------------------------------

def test_zero_evidence_gives_flagged_defaults_and_a_score():
    a = assess_static(inst("Vendor bulletin."))
    assert all(d.defaulted for d in a.per_metric_decisions)
    assert str(a.vector) == "AV:L/AC:H/PR:H/UI:R/S:U/C:N/I:N/A:N"
    assert a.base_score == 0.0


def test_gateway_failure_falls_back_to_flagged_default():
    analyzer = StaticAnalyzer(Gateway(ScriptedBackend(lambda p: "no idea")))
    t = inst(SPOOLER)
    evidence = build_evidence_set(t, Metric.AV)
    d = analyzer.classify_metric(evidence, Metric.AV, t)
    assert d.defaulted and d.value is DEFAULTS[Metric.AV]
    assert "gateway failure" in d.rationale and d.evidence


def test_defaulted_flags_are_sound_and_complete():
    # gateway answers AV only; every other classify call fails
    def responder(prompt):
        if prompt.template_id == "metric-classify-av":
            return {"value": "Network", "confidence": 0.9, "rationale": "r",
                    "cited_spans": ["authenticated remote attacker"]}
        return "prose"

    t = inst(SPOOLER)
    a = StaticAnalyzer(Gateway(ScriptedBackend(responder))).assess_static(t)
    for d in a.per_metric_decisions:
        empty = not build_evidence_set(t, d.metric)
        gateway_path = d.metric is not Metric.S
        expected = empty or (gateway_path and d.metric is not Metric.AV)
        assert d.defaulted is expected, d.metric


def test_gateway_rationale_cites_evidence_and_ignores_foreign_spans():
    def responder(prompt):
        return {"value": "Network", "confidence": 0.7, "rationale": "exposed", "cited_spans": ["made up"]}

    t = inst(SPOOLER)
    d = StaticAnalyzer(Gateway(ScriptedBackend(responder))).classify_metric(
        build_evidence_set(t, Metric.AV), Metric.AV, t)
    assert d.value is AttackVector.NETWORK and not d.defaulted
    assert any(e.span in d.rationale for e in d.evidence)
    assert all(e.span != "made up" for e in d.evidence)


def test_score_comes_from_the_engine():
    def responder(prompt):
        # a model that tries to hand back a number is ignored beyond the categorical value
        return {"value": MOST_SEVERE[prompt.template_id], "confidence": 1.0,
                "rationale": "base score 10.0", "cited_spans": []}

    a = StaticAnalyzer(Gateway(ScriptedBackend(responder))).assess_static(inst(SPOOLER))
    assert a.base_score == base_score(a.vector).base


# -- NVD comparison ------------------------------------------------------------------------------

def test_nvd_comparison_reports_per_metric_accuracy():
    ev = evaluate_static(load_nvd_cases())
    assert ev.cases >= 50
    assert set(ev.accuracy) == set(Metric)
    assert all(0.0 <= v <= 1.0 for v in ev.accuracy.values())
    for row in ev.rows:
        assert row["assessed_score"] == base_score(parse_cvss_vector(row["assessed"])).base
