"""Structured completion with schema validation and one bounded repair attempt."""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional

from ..errors import RateLimited, SchemaViolation
from .backends import Backend
from .schemas import validation_errors
from .templates import RenderedPrompt, render

log = logging.getLogger(__name__)

# classification-style templates run at the most deterministic setting
DETERMINISTIC = 0.0
FENCE = re.compile(r"^```(?:json)?\s*(.*?)\s*```$", re.DOTALL)


@dataclass(frozen=True)
class CompletionRequest:
    prompt: RenderedPrompt
    temperature: float = DETERMINISTIC

    @property
    def schema_id(self) -> str:
        return self.prompt.schema_id


@dataclass(frozen=True)
class CompletionResult:
    document: Any
    raw_text: str
    backend: str
    latency: float
    prompt_digest: str
    attempts: int = 1


@dataclass
class GatewayStats:
    calls: int = 0
    repairs: int = 0
    failures: int = 0
    rate_limited: int = 0
    log: list[dict] = field(default_factory=list)


def parse_document(raw: str) -> Any:
    text = raw.strip()
    m = FENCE.match(text)
    if m:
        text = m.group(1)
    return json.loads(text)


class Gateway:
    """Provider-agnostic front door for every model call in the pipeline.

    Downstream code only ever sees ``CompletionResult.document`` after it has
    validated against the template's response schema.
    """

    def __init__(self, backend: Backend, max_in_flight: int = 4, max_rate_retries: int = 3,
                 sleep: Callable[[float], None] = time.sleep, clock: Callable[[], float] = time.perf_counter):
        self.backend = backend
        self.max_rate_retries = max_rate_retries
        self._slots = threading.BoundedSemaphore(max(1, max_in_flight))
        self._sleep = sleep
        self._clock = clock
        self._lock = threading.Lock()
        self.stats = GatewayStats()

    def render(self, template_id: str, bindings: Mapping[str, Any]) -> RenderedPrompt:
        return render(template_id, bindings)

    def complete(self, template_id: str, bindings: Mapping[str, Any],
                 temperature: float = DETERMINISTIC) -> CompletionResult:
        return self.complete_structured(CompletionRequest(render(template_id, bindings), temperature))

    def _call(self, prompt: RenderedPrompt, temperature: float) -> str:
        attempts = 0
        while True:
            try:
                with self._slots:
                    return self.backend.complete(prompt, temperature)
            except RateLimited as exc:
                attempts += 1
                with self._lock:
                    self.stats.rate_limited += 1
                if attempts > self.max_rate_retries:
                    raise
                log.info("rate limited on %s, sleeping %.1fs", prompt.template_id, exc.retry_after)
                self._sleep(exc.retry_after)

    def complete_structured(self, request: CompletionRequest) -> CompletionResult:
        prompt = request.prompt
        started = self._clock()
        raw = self._call(prompt, request.temperature)
        document, errors = self._check(prompt.schema_id, raw)
        attempts = 1
        if errors:
            with self._lock:
                self.stats.repairs += 1
            repair = prompt.with_user_suffix(
                "\n\nYour previous answer did not validate against the required JSON schema:\n- "
                + "\n- ".join(errors)
                + "\nRespond again with a single JSON object that satisfies the schema and nothing else."
            )
            raw = self._call(repair, request.temperature)
            document, errors = self._check(prompt.schema_id, raw)
            attempts = 2
        latency = self._clock() - started
        entry = {"template": prompt.template_id, "digest": prompt.digest, "attempts": attempts,
                 "ok": not errors, "backend": self.backend.name}
        with self._lock:
            self.stats.calls += 1
            self.stats.log.append(entry)
            if errors:
                self.stats.failures += 1
        log.debug("gateway %s digest=%s attempts=%d ok=%s", prompt.template_id, prompt.digest[:12],
                  attempts, not errors)
        if errors:
            raise SchemaViolation(f"{prompt.template_id}: response failed schema after repair", errors, raw)
        return CompletionResult(document, raw, self.backend.name, latency, prompt.digest, attempts)

    @staticmethod
    def _check(schema_id: str, raw: str) -> tuple[Any, list[str]]:
        try:
            document = parse_document(raw)
        except (json.JSONDecodeError, TypeError) as exc:
            return None, [f"<root>: response is not JSON ({exc.__class__.__name__})"]
        return document, validation_errors(schema_id, document)
