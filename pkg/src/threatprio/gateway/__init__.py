"""Model gateway: prompt templates, backends and schema-checked structured completion."""

from .backends import HttpBackend, RecordingBackend, ScriptedBackend, StubBackend, write_fixture
from .client import CompletionRequest, CompletionResult, Gateway
from .templates import TEMPLATE_IDS, PromptTemplate, RenderedPrompt, load_template, render

__all__ = [
    "CompletionRequest",
    "CompletionResult",
    "Gateway",
    "HttpBackend",
    "PromptTemplate",
    "RecordingBackend",
    "RenderedPrompt",
    "ScriptedBackend",
    "StubBackend",
    "TEMPLATE_IDS",
    "load_template",
    "render",
    "write_fixture",
]
