"""Prompt templates stored as versioned YAML assets and rendered deterministically."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Any, Mapping

import yaml

from ..errors import UnboundPlaceholder

PLACEHOLDER = re.compile(r"\{\{([A-Z][A-Z0-9_]*)\}\}")

TEMPLATE_IDS = (
    "disentangle",
    "metric-classify-av",
    "metric-classify-ac",
    "metric-classify-pr",
    "metric-classify-ui",
    "metric-classify-cia",
    "forecast",
    "mitigation-retrieve",
    "mitigation-prioritize",
)


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    version: int
    system_text: str
    user_text: str
    response_schema: str
    authored_sections: tuple[str, ...] = ()

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(PLACEHOLDER.findall(self.system_text + self.user_text))

    @property
    def content_digest(self) -> str:
        payload = json.dumps([self.id, self.version, self.system_text, self.user_text, self.response_schema])
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class RenderedPrompt:
    template_id: str
    system: str
    user: str
    schema_id: str
    template_digest: str

    @property
    def digest(self) -> str:
        """Key of this prompt in the fixture store."""
        payload = json.dumps([self.template_id, self.schema_id, self.system, self.user])
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def with_user_suffix(self, suffix: str) -> "RenderedPrompt":
        return RenderedPrompt(self.template_id, self.system, self.user + suffix, self.schema_id, self.template_digest)


@lru_cache(maxsize=None)
def load_template(template_id: str) -> PromptTemplate:
    if template_id not in TEMPLATE_IDS:
        raise KeyError(f"unknown template {template_id!r}")
    text = resources.files(__package__).joinpath("templates", f"{template_id}.yaml").read_text("utf-8")
    raw = yaml.safe_load(text)
    return PromptTemplate(
        id=raw["id"],
        version=int(raw["version"]),
        system_text=raw["system"],
        user_text=raw["user"],
        response_schema=raw["response_schema"],
        authored_sections=tuple(raw.get("authored_sections") or ()),
    )


def _as_text(value: Any) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value, indent=2, sort_keys=True, ensure_ascii=False, default=str)


def render(template_id: str, bindings: Mapping[str, Any]) -> RenderedPrompt:
    """Substitute ``{{NAME}}`` placeholders; every placeholder must be bound."""
    template = load_template(template_id)
    missing = sorted(template.placeholders - set(bindings))
    if missing:
        raise UnboundPlaceholder(f"template {template_id}: unbound placeholder(s) {', '.join(missing)}")

    def sub(text: str) -> str:
        return PLACEHOLDER.sub(lambda m: _as_text(bindings[m.group(1)]), text)

    return RenderedPrompt(
        template_id=template.id,
        system=sub(template.system_text),
        user=sub(template.user_text),
        schema_id=template.response_schema,
        template_digest=template.content_digest,
    )
