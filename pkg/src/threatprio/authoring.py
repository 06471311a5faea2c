"""Deterministic stand-in analyst used to author gateway fixtures.

Responses for free-form templates (disentangle, forecast, mitigation-retrieve,
mitigation-prioritize) come from a hand-written YAML file matched on a
substring of the rendered prompt. Metric classification falls back to the
cue lexicon, and plan justifications fall back to a short templated note, so
a fixture set can be regenerated from inputs alone.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence

import yaml

from .errors import BackendUnavailable, ConfigError
from .gateway import RenderedPrompt
from .model import Metric
from .static_analysis import lexicon_analyst_answer

log = logging.getLogger(__name__)

_METRIC_OF_TEMPLATE = {
    "metric-classify-av": Metric.AV,
    "metric-classify-ac": Metric.AC,
    "metric-classify-pr": Metric.PR,
    "metric-classify-ui": Metric.UI,
}
_CIA_LINE = re.compile(r"^Metric: .*\((C|I|A)\)\s*$", re.MULTILINE)
_EVIDENCE_HEADER = "Evidence (span | source):"


@dataclass(frozen=True)
class AuthoredEntry:
    template: str
    match: str
    response: Any


def parse_evidence(user_text: str) -> list[tuple[str, str]]:
    """(span, source) pairs from the evidence block of a classification prompt."""
    _, _, block = user_text.partition(_EVIDENCE_HEADER)
    out = []
    for line in block.splitlines():
        line = line.strip()
        if not line.startswith("- "):
            continue
        span, sep, source = line[2:].rpartition(" | ")
        out.append((span, source) if sep else (line[2:], ""))
    return out


def _json_block(text: str, opener: str, closer: str) -> Any:
    start, end = text.find(opener), text.rfind(closer)
    if start < 0 or end < start:
        return None
    try:
        return json.loads(text[start:end + 1])
    except json.JSONDecodeError:
        return None


def compose_justifications(user_text: str) -> dict:
    plan = _json_block(user_text, "[", "]") or []
    notes = []
    for item in plan:
        note = f"Phase {item.get('phase')} work item; begin with: {item.get('recommended_action')}."
        if item.get("tie_breaker"):
            note += f" Placement among near-equal risks follows {item['tie_breaker']}."
        notes.append({"target": item.get("target", ""), "note": note})
    return {"justifications": notes}


class AuthoredResponder:
    def __init__(self, entries: Sequence[AuthoredEntry]):
        self.entries = list(entries)

    @classmethod
    def from_file(cls, path: Path | str) -> "AuthoredResponder":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text("utf-8")) or []
        except OSError as exc:
            raise ConfigError(f"cannot read authored responses {path}: {exc}") from exc
        entries = []
        for n, item in enumerate(raw):
            for key in ("template", "match", "response"):
                if key not in item:
                    raise ConfigError(f"missing required field '{key}' in authored response #{n}")
            entries.append(AuthoredEntry(item["template"], item["match"], item["response"]))
        return cls(entries)

    def lookup(self, prompt: RenderedPrompt) -> Optional[Any]:
        for e in self.entries:
            if e.template == prompt.template_id and e.match in prompt.user:
                return e.response
        return None

    def __call__(self, prompt: RenderedPrompt) -> Any:
        found = self.lookup(prompt)
        if found is not None:
            return found
        tid = prompt.template_id
        if tid in _METRIC_OF_TEMPLATE:
            return lexicon_analyst_answer(_METRIC_OF_TEMPLATE[tid], parse_evidence(prompt.user))
        if tid == "metric-classify-cia":
            m = _CIA_LINE.search(prompt.user)
            if not m:
                raise BackendUnavailable("classification prompt names no impact metric")
            return lexicon_analyst_answer(Metric(m.group(1)), parse_evidence(prompt.user))
        if tid == "mitigation-prioritize":
            return compose_justifications(prompt.user)
        if tid == "mitigation-retrieve":
            return {"patches": [], "workarounds": [], "mitigation_notes": [], "detections": []}
        raise BackendUnavailable(f"no authored response for {tid} prompt {prompt.digest[:12]}")
