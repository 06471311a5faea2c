"""Adversarial model answers: anything not grounded in the inputs is dropped and logged."""

from __future__ import annotations

import logging
import re

import pytest

from threatprio.gateway import Gateway, ScriptedBackend, StubBackend
from threatprio.knowledge import KnowledgeStore
from threatprio.mitigation import MitigationPlanner, PhasePolicy, PlanInput, RetrievalReport, prioritize
from threatprio.model import RawIncident, RiskInputs
from threatprio.pipeline import load_incidents
from threatprio.triage import Triage, TriageReport

from conftest import DEMO

TEXT = ("Acme Gateway 4.2 fixes CVE-2021-44228 in the logging module. Scanning from 203.0.113.7 was observed "
        "against exposed consoles.")
INCIDENT = RawIncident("INC-A-1", TEXT, "feed", "2021-12-20")


def store() -> KnowledgeStore:
    return KnowledgeStore(fixture_dir=DEMO / "knowledge", as_of="2022-01-31", offline=True)


def separate(instance: dict):
    report = TriageReport()
    tri = Triage(Gateway(ScriptedBackend(lambda p: {"instances": [instance]})), store())
    return tri.separate_events(INCIDENT, report), report


def base(**fields) -> dict:
    d = {"vendor": "Acme", "impact": "remote code execution", "affected_components": ["logging module"],
         "indicators": ["CVE-2021-44228"], "description": "Acme Gateway 4.2 fixes CVE-2021-44228 in the logging module."}
    d.update(fields)
    return d


# -- triage ------------------------------------------------------------------------------------------

TRIAGE_CASES = {
    "fabricated IP": (base(indicators=["CVE-2021-44228", "198.51.100.99"]), "198.51.100.99"),
    "fabricated CVE": (base(indicators=["CVE-2021-44228", "CVE-2021-45046"]), "CVE-2021-45046"),
    "fabricated hash": (base(indicators=["CVE-2021-44228", "d41d8cd98f00b204e9800998ecf8427e"]),
                        "d41d8cd98f00b204e9800998ecf8427e"),
    "fabricated domain": (base(indicators=["CVE-2021-44228", "evil.example"]), "evil.example"),
    "alias unknown to NVD": (base(cve_aliases=["CVE-2099-1234"]), "CVE-2099-1234"),
    "alias whose record names other components": (
        base(cve_aliases=["CVE-2021-34527"], affected_components=["logging module"]), "CVE-2021-34527"),
    "paraphrased description": (base(description="A critical remote code execution issue in Acme logging."),
                                "A critical remote code execution issue in Acme logging."),
}


@pytest.mark.parametrize("case", list(TRIAGE_CASES))
def test_triage_drops_ungrounded_content(case, caplog):
    raw, fabricated = TRIAGE_CASES[case]
    with caplog.at_level(logging.WARNING, logger="threatprio.triage"):
        out, report = separate(raw)
    kept = {i for inst in out for i in inst.indicators} | {inst.description for inst in out}
    assert fabricated not in kept
    assert any(d["item"].startswith(fabricated[:80]) for d in report.dropped)
    assert fabricated[:40] in caplog.text
    # the grounded part survives
    assert [inst.cve_ids for inst in out] == [("CVE-2021-44228",)]


def test_instance_with_nothing_grounded_is_dropped(caplog):
    with caplog.at_level(logging.WARNING, logger="threatprio.triage"):
        out, report = separate(base(indicators=["10.9.9.9"], description="Made-up summary.", impact="worm"))
    assert out == []
    assert any(d["reason"] == "instance has no grounded content" for d in report.dropped)
    assert "no threat instances" in " ".join(report.warnings)


def test_case_insensitive_match_is_not_fabrication():
    out, report = separate(base(indicators=["cve-2021-44228", "203.0.113.7"]))
    assert out[0].indicators == ("CVE-2021-44228", "203.0.113.7") and not report.dropped


def test_demo_fixture_fabrications_are_dropped():
    incidents = {i.id: i for i in load_incidents(DEMO / "incidents.jsonl")}
    tri = Triage(Gateway(StubBackend(DEMO / "gateway")), store())
    report = TriageReport()
    out = tri.separate_events(incidents["INC-2021-0715"], report)
    assert all("198.51.100.23" not in i.indicators for i in out)
    assert [d["item"] for d in report.dropped] == ["198.51.100.23"]


# -- mitigation retrieval ---------------------------------------------------------------------------------

def spooler():
    incidents = {i.id: i for i in load_incidents(DEMO / "incidents.jsonl")}
    tri = Triage(Gateway(StubBackend(DEMO / "gateway")), store())
    enriched, _ = tri.triage_incident(incidents["INC-2021-0701"])
    return enriched[1]


def msrc_ref(prompt) -> str:
    return re.search(r'"id": "MSRC-CVE-2021-34527",\s*"ref": "(D\d+)"', prompt.user).group(1)


def item(title, ref="MSRC", **kw) -> dict:
    return dict({"title": title, "source_ref": ref, "vendor": "Microsoft"}, **kw)


MITIGATION_CASES = {
    "fabricated patch": ("patches", item("Print Spooler emergency fix", identifier="KB9999999", maturity="ga"),
                         "patch absent from every retrieved source"),
    "real KB under an uncited document": ("patches", item("Spooler rollup", ref="D99", identifier="KB5004237"),
                                          "cites no retrieved document"),
    "invented KB number": ("patches", item("July 2021 rollup", identifier="KB5004238"),
                           "patch absent from every retrieved source"),
    "unsupported workaround": ("workarounds", item("Uninstall all printer drivers"),
                               "not supported by the cited document"),
    "invented detection": ("detections", item("Sigma rule: spoolsv spawning powershell"),
                           "not supported by the cited document"),
    "uncited note": ("mitigation_notes", item("Restrict Point and Print", ref=""), "cites no retrieved document"),
}


def _answer(bucket, proposal, prompt):
    doc = {"patches": [], "workarounds": [], "mitigation_notes": [], "detections": []}
    p = dict(proposal)
    if p["source_ref"] == "MSRC":
        p["source_ref"] = msrc_ref(prompt)
    doc[bucket].append(p)
    return doc


@pytest.mark.parametrize("case", list(MITIGATION_CASES))
def test_mitigation_drops_ungrounded_proposals(case, caplog):
    bucket, proposal, reason = MITIGATION_CASES[case]
    planner = MitigationPlanner(store(), Gateway(ScriptedBackend(lambda p: _answer(bucket, proposal, p))))
    report = RetrievalReport("INC-2021-0701-2")
    with caplog.at_level(logging.WARNING, logger="threatprio.mitigation"):
        actions = planner.retrieve_mitigations(spooler(), report)
    assert proposal["title"] not in {a.title for a in actions}
    assert [d["reason"] for d in report.dropped] == [reason]
    assert proposal["title"] in caplog.text


def test_grounded_workaround_is_accepted():
    proposal = item("disable inbound remote printing through Group Policy")
    planner = MitigationPlanner(store(), Gateway(ScriptedBackend(lambda p: _answer("workarounds", proposal, p))))
    report = RetrievalReport("INC-2021-0701-2")
    titles = {a.title.casefold() for a in planner.retrieve_mitigations(spooler(), report)}
    assert proposal["title"].casefold() in titles and not report.dropped


def test_justification_cannot_reorder_or_invent_targets(caplog):
    t = spooler()
    plan = prioritize([PlanInput(t.id, RiskInputs(8.8, 0.5), target=t.id)], PhasePolicy())
    answer = {"justifications": [{"target": "INC-9-9", "note": "Do this first."},
                                 {"target": t.id, "note": "Domain controllers are exposed."}]}
    planner = MitigationPlanner(store(), Gateway(ScriptedBackend(lambda p: answer)))
    with caplog.at_level(logging.WARNING, logger="threatprio.mitigation"):
        justified = planner.justify(plan)
    assert [e.target for e in justified.entries] == [t.id]
    assert justified.entries[0].justification.endswith("Domain controllers are exposed.")
    assert "INC-9-9" in caplog.text
