"""Completion backends: digest-keyed fixture stub, chat-completion HTTP, scripted, recording."""

from __future__ import annotations

import json
import logging
import os
import threading
from pathlib import Path
from typing import Any, Callable, Optional, Protocol, Union

import httpx

from ..errors import BackendUnavailable, FixtureMiss, RateLimited
from .templates import RenderedPrompt

log = logging.getLogger(__name__)

ENV_URL = "THREATPRIO_LLM_URL"
ENV_KEY = "THREATPRIO_LLM_API_KEY"
ENV_MODEL = "THREATPRIO_LLM_MODEL"


class Backend(Protocol):
    name: str

    def complete(self, prompt: RenderedPrompt, temperature: float) -> str:
        ...


def fixture_path(directory: Union[str, Path], digest: str) -> Path:
    return Path(directory) / f"{digest}.json"


def write_fixture(directory: Union[str, Path], prompt: RenderedPrompt, raw: str) -> Path:
    path = fixture_path(directory, prompt.digest)
    path.parent.mkdir(parents=True, exist_ok=True)
    record = {"digest": prompt.digest, "template_id": prompt.template_id, "response": raw}
    path.write_text(json.dumps(record, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


class StubBackend:
    """Replays recorded responses from ``<fixture_dir>/<prompt digest>.json``.

    Read-only, so any number of threads may share one instance.
    """

    name = "stub"

    def __init__(self, fixture_dir: Union[str, Path]):
        self.fixture_dir = Path(fixture_dir)

    def complete(self, prompt: RenderedPrompt, temperature: float) -> str:
        path = fixture_path(self.fixture_dir, prompt.digest)
        if not path.is_file():
            raise FixtureMiss(prompt.digest, prompt.template_id)
        record = json.loads(path.read_text(encoding="utf-8"))
        response = record.get("response")
        if response is None and "document" in record:
            return json.dumps(record["document"], sort_keys=True)
        if not isinstance(response, str):
            return json.dumps(response, sort_keys=True)
        return response


class HttpBackend:
    """Chat-completion style JSON endpoint (``{"messages": [...]}`` in, ``choices[0].message.content`` out)."""

    name = "http"

    def __init__(self, url: Optional[str] = None, api_key: Optional[str] = None, model: Optional[str] = None,
                 timeout: float = 60.0, client: Optional[httpx.Client] = None):
        self.url = url or os.environ.get(ENV_URL)
        if not self.url:
            raise BackendUnavailable(f"http backend needs an endpoint URL (set {ENV_URL})")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_KEY, "")
        self.model = model or os.environ.get(ENV_MODEL, "default")
        self._client = client or httpx.Client(timeout=timeout)

    def complete(self, prompt: RenderedPrompt, temperature: float) -> str:
        body = {
            "model": self.model,
            "temperature": temperature,
            "response_format": {"type": "json_object"},
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
        }
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = self._client.post(self.url, json=body, headers=headers)
        except httpx.HTTPError as exc:
            raise BackendUnavailable(f"http backend unreachable: {exc}") from exc
        if resp.status_code == 429:
            try:
                retry_after = float(resp.headers.get("retry-after", "1"))
            except ValueError:
                retry_after = 1.0
            raise RateLimited(retry_after)
        if resp.status_code >= 400:
            raise BackendUnavailable(f"http backend returned {resp.status_code}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(f"unexpected chat-completion payload: {exc}") from exc


Responder = Callable[[RenderedPrompt], Union[str, dict, list]]


class ScriptedBackend:
    """Answers from a Python callable; used to author fixtures and in tests."""

    name = "scripted"

    def __init__(self, responder: Responder):
        self.responder = responder
        self.calls: list[RenderedPrompt] = []
        self._lock = threading.Lock()

    def complete(self, prompt: RenderedPrompt, temperature: float) -> str:
        with self._lock:
            self.calls.append(prompt)
        answer = self.responder(prompt)
        if isinstance(answer, Exception):
            raise answer
        if isinstance(answer, str):
            return answer
        return json.dumps(answer, sort_keys=True, ensure_ascii=False)


class RecordingBackend:
    """Wraps another backend and writes every successful response as a stub fixture."""

    def __init__(self, inner: Any, fixture_dir: Union[str, Path]):
        self.inner = inner
        self.fixture_dir = Path(fixture_dir)
        self.name = f"recording({inner.name})"
        self.recorded: list[str] = []
        self._lock = threading.Lock()

    def complete(self, prompt: RenderedPrompt, temperature: float) -> str:
        raw = self.inner.complete(prompt, temperature)
        with self._lock:
            write_fixture(self.fixture_dir, prompt, raw)
            self.recorded.append(prompt.digest)
        log.debug("recorded fixture %s (%s)", prompt.digest[:12], prompt.template_id)
        return raw
