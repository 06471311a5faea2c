"""Gateway: template rendering, schema repair, stub fixtures, rate limits and the HTTP wire format."""

from __future__ import annotations

import json

import httpx
import pytest

from threatprio.errors import BackendUnavailable, FixtureMiss, RateLimited, SchemaViolation, UnboundPlaceholder
from threatprio.gateway import (
    TEMPLATE_IDS,
    Gateway,
    HttpBackend,
    RecordingBackend,
    ScriptedBackend,
    StubBackend,
    load_template,
    render,
)
from threatprio.gateway.schemas import SCHEMAS, validation_errors
from threatprio.pipeline import load_incidents
from threatprio.model import format_timestamp

from conftest import DEMO

RULES = ("Do not invent information",)
DISENTANGLE = {"SOURCE": "feed", "OBSERVED_AT": "2021-07-02T09:00:00Z", "RAW_INCIDENT_TEXT": "Print Spooler flaw"}
GOOD_AV = {"value": "Network", "confidence": 0.9, "rationale": "remote", "cited_spans": ["remote attacker"]}


def av_bindings(evidence="remote attacker"):
    return {"THREAT_SUMMARY": "spooler", "EVIDENCE": evidence}


# -- templates ----------------------------------------------------------------------------

@pytest.mark.parametrize("template_id", TEMPLATE_IDS)
def test_every_template_loads_with_a_schema(template_id):
    t = load_template(template_id)
    assert t.id == template_id
    assert t.response_schema in SCHEMAS
    assert t.placeholders


def test_disentangle_carries_the_numbered_rules():
    prompt = render("disentangle", DISENTANGLE)
    text = prompt.system + prompt.user
    for rule in RULES:
        assert rule in text
    for n in range(1, 6):
        assert f"{n}." in text
    assert "Print Spooler flaw" in prompt.user


def test_missing_binding_raises():
    with pytest.raises(UnboundPlaceholder, match="RAW_INCIDENT_TEXT"):
        render("disentangle", {"SOURCE": "x", "OBSERVED_AT": "y"})


def test_rendering_is_byte_identical():
    a, b = render("disentangle", DISENTANGLE), render("disentangle", dict(DISENTANGLE))
    assert (a.system, a.user, a.digest) == (b.system, b.user, b.digest)
    assert render("disentangle", dict(DISENTANGLE, SOURCE="other")).digest != a.digest


def test_non_string_bindings_render_as_sorted_json():
    p = render("mitigation-prioritize", {"PLAN": {"b": 1, "a": [1, 2]}})
    assert json.dumps({"b": 1, "a": [1, 2]}, indent=2, sort_keys=True) in p.user


def test_template_digest_is_content_addressed():
    t = load_template("forecast")
    assert render("forecast", {k: "x" for k in t.placeholders}).template_digest == t.content_digest
    assert load_template("forecast").content_digest != load_template("disentangle").content_digest


# -- structured completion ---------------------------------------------------------------------

def test_valid_answer_passes_first_time():
    backend = ScriptedBackend(lambda p: GOOD_AV)
    gw = Gateway(backend)
    result = gw.complete("metric-classify-av", av_bindings())
    assert result.document == GOOD_AV
    assert result.attempts == 1 and result.backend == "scripted"
    assert gw.stats.calls == 1 and gw.stats.repairs == 0
    assert gw.stats.log[0]["digest"] == result.prompt_digest


def test_fenced_json_is_accepted():
    gw = Gateway(ScriptedBackend(lambda p: "```json\n" + json.dumps(GOOD_AV) + "\n```"))
    assert gw.complete("metric-classify-av", av_bindings()).document["value"] == "Network"


def test_one_repair_with_errors_appended():
    answers = iter(["The attack vector is clearly Network.", GOOD_AV])
    backend = ScriptedBackend(lambda p: next(answers))
    result = Gateway(backend).complete("metric-classify-av", av_bindings())
    assert result.attempts == 2 and result.document == GOOD_AV
    assert "did not validate" in backend.calls[1].user
    assert backend.calls[1].user.startswith(backend.calls[0].user)


def test_prose_twice_is_schema_violation():
    backend = ScriptedBackend(lambda p: "I think it is Network.")
    gw = Gateway(backend)
    with pytest.raises(SchemaViolation) as info:
        gw.complete("metric-classify-av", av_bindings())
    assert len(backend.calls) == 2
    assert info.value.errors and gw.stats.failures == 1


def test_out_of_domain_value_is_rejected():
    bad = dict(GOOD_AV, value="Internet")
    assert validation_errors("metric-classify-av", bad)
    with pytest.raises(SchemaViolation):
        Gateway(ScriptedBackend(lambda p: bad)).complete("metric-classify-av", av_bindings())


def test_rate_limit_honours_retry_after():
    sleeps = []
    answers = iter([RateLimited(2.5), RateLimited(1.0), GOOD_AV])
    gw = Gateway(ScriptedBackend(lambda p: next(answers)), sleep=sleeps.append)
    assert gw.complete("metric-classify-av", av_bindings()).document == GOOD_AV
    assert sleeps == [2.5, 1.0] and gw.stats.rate_limited == 2


def test_rate_limit_gives_up_after_bound():
    gw = Gateway(ScriptedBackend(lambda p: RateLimited(0.1)), max_rate_retries=2, sleep=lambda s: None)
    with pytest.raises(RateLimited):
        gw.complete("metric-classify-av", av_bindings())


# -- stub and recording -------------------------------------------------------------------------

def test_stub_miss_is_backend_unavailable(tmp_path):
    gw = Gateway(StubBackend(tmp_path))
    with pytest.raises(FixtureMiss) as info:
        gw.complete("metric-classify-av", av_bindings())
    assert isinstance(info.value, BackendUnavailable)
    assert info.value.digest == render("metric-classify-av", av_bindings()).digest


def test_recording_then_replay(tmp_path):
    recorder = RecordingBackend(ScriptedBackend(lambda p: GOOD_AV), tmp_path)
    first = Gateway(recorder).complete("metric-classify-av", av_bindings())
    assert recorder.recorded == [first.prompt_digest]
    assert (tmp_path / f"{first.prompt_digest}.json").is_file()
    replay = Gateway(StubBackend(tmp_path)).complete("metric-classify-av", av_bindings())
    assert replay.document == first.document and replay.raw_text == first.raw_text


def test_demo_fixture_splits_the_spooler_advisory():
    incident = next(i for i in load_incidents(DEMO / "incidents.jsonl") if i.id == "INC-2021-0701")
    gw = Gateway(StubBackend(DEMO / "gateway"))
    result = gw.complete("disentangle", {
        "SOURCE": incident.source,
        "OBSERVED_AT": format_timestamp(incident.observed_at),
        "RAW_INCIDENT_TEXT": incident.text,
    })
    instances = result.document["instances"]
    assert len(instances) == 2
    # the remote-code-execution flaw is named only by alias; triage confirms it against NVD
    cves = {c for i in instances for c in i["indicators"] + i.get("cve_aliases", []) if c.startswith("CVE-")}
    assert cves == {"CVE-2021-1675", "CVE-2021-34527"}


# -- http wire format ---------------------------------------------------------------------------

def _client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_http_backend_speaks_chat_completion():
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        seen["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json={"choices": [{"message": {"content": json.dumps(GOOD_AV)}}]})

    backend = HttpBackend("http://llm.invalid/v1/chat", api_key="k", model="m", client=_client(handler))
    result = Gateway(backend).complete("metric-classify-av", av_bindings())
    assert result.document == GOOD_AV
    assert seen["auth"] == "Bearer k"
    assert [m["role"] for m in seen["body"]["messages"]] == ["system", "user"]
    assert seen["body"]["temperature"] == 0.0


def test_http_backend_maps_429_and_errors():
    backend = HttpBackend("http://llm.invalid", client=_client(lambda r: httpx.Response(429, headers={"retry-after": "7"})))
    with pytest.raises(RateLimited) as info:
        backend.complete(render("metric-classify-av", av_bindings()), 0.0)
    assert info.value.retry_after == 7.0
    backend = HttpBackend("http://llm.invalid", client=_client(lambda r: httpx.Response(500)))
    with pytest.raises(BackendUnavailable):
        backend.complete(render("metric-classify-av", av_bindings()), 0.0)


def test_http_backend_needs_url(monkeypatch):
    monkeypatch.delenv("THREATPRIO_LLM_URL", raising=False)
    with pytest.raises(BackendUnavailable):
        HttpBackend()
